//! Reference computations that share no code with the library.

/// Maximum matching on a binary slot × advertiser bid matrix with unit
/// budgets, by enumerating every slot → advertiser-or-nobody assignment.
pub fn brute_force_matching(bids: &[f64], m: usize, n: usize) -> f64 {
    let choices = n + 1;
    let total = choices.pow(m as u32);
    let mut best = 0.0f64;
    for code in 0..total {
        let mut c = code;
        let mut used = vec![false; n];
        let mut value = 0.0;
        let mut ok = true;
        for j in 0..m {
            let pick = c % choices;
            c /= choices;
            if pick == n {
                continue;
            }
            if used[pick] || bids[j * n + pick] == 0.0 {
                ok = false;
                break;
            }
            used[pick] = true;
            value += 1.0;
        }
        if ok {
            best = best.max(value);
        }
    }
    best
}

/// Dual objective `Σ_j max_i v_ji (1 − λ_i)^+ + Σ_i λ_i B_i`, an upper bound
/// on the fractional optimum for any `λ ≥ 0`.
pub fn dual_objective(bids: &[f64], budgets: &[f64], lambda: &[f64], m: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..m {
        let mut best = 0.0f64;
        for i in 0..n {
            best = best.max(bids[j * n + i] * (1.0 - lambda[i]));
        }
        total += best;
    }
    total + lambda.iter().zip(budgets).map(|(l, b)| l * b).sum::<f64>()
}

pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`, maximised over entries.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn max_abs_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `1 / (1 − (1 − 1/B)^B)`.
pub fn ski_bound(b: usize) -> f64 {
    1.0 / (1.0 - (1.0 - 1.0 / b as f64).powi(b as i32))
}

/// Worst expected-cost ratio of a randomized buy-day distribution, by direct
/// simulation of every (buy day, season length) pair. `probs[i]` is the
/// probability of buying at the start of day `i + 1`.
pub fn ski_discrete_cr(probs: &[f64], b: usize) -> f64 {
    let n = probs.len();
    let mut worst = 0.0f64;
    for season in 1..=n {
        let mut expected = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            let day = i + 1;
            let cost = if day <= season { (day - 1 + b) as f64 } else { season as f64 };
            expected += p * cost;
        }
        worst = worst.max(expected / season.min(b) as f64);
    }
    worst
}
