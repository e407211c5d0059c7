//! Continuous ski rental: a Gaussian-kernel CDF network trained against an
//! ε-net adversary over season lengths, plus the closed-form discrete optimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    adam_step, evaluate_and_grad, gauss_cdf, mlp_apply, mlp_apply_values, Activation, AdamConfig, AdamState,
    AutodiffError, Mlp, ParamLayout, ParamVector, Shape,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkiError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("CDF decreases by {drop} at grid point {at}")]
    NonMonotone { at: usize, drop: f64 },
    #[error("training diverged at iteration {iteration}: CR {cr}")]
    Diverged {
        iteration: usize,
        cr: f64,
        /// Parameters at the moment of divergence.
        checkpoint: Box<KernelCdf>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Season end `alpha` and normalised buy cost `beta`, both in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkiScenario {
    pub alpha: f64,
    pub beta: f64,
}

impl SkiScenario {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, SkiError> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SkiError::InvalidScenario(format!("{name} = {v} not in (0, 1]")));
            }
        }
        Ok(SkiScenario { alpha, beta })
    }
}

/// Grid points `k/g`, `k = 0..=g`.
fn grid(g: usize) -> Vec<f64> {
    (0..=g).map(|k| k as f64 / g as f64).collect()
}

/// CR of buying with CDF `cdf` (probability of having bought by time τ),
/// with purchases only at grid points `k/g`. Buying at τ costs `β + τ`;
/// never buying before the season ends costs `α`.
pub fn ski_cr(cdf: impl Fn(f64) -> f64, scenario: SkiScenario, g: usize) -> Result<f64, SkiError> {
    let SkiScenario { alpha, beta } = scenario;
    let taus: Vec<f64> = grid(g).into_iter().filter(|&t| t <= alpha + 1e-12).collect();
    let p: Vec<f64> = taus.iter().map(|&t| cdf(t)).collect();
    let mut cost = 0.0;
    let mut prev = 0.0;
    for (k, (&t, &pk)) in taus.iter().zip(&p).enumerate() {
        if pk < prev - 1e-9 {
            return Err(SkiError::NonMonotone { at: k, drop: prev - pk });
        }
        cost += (beta + t) * (pk - prev);
        prev = pk;
    }
    cost += alpha * (1.0 - prev);
    Ok(cost / alpha.min(beta))
}

/// CR at every grid season end `α = a/g`, `a = 1..=g`, from CDF values on the grid.
///
/// Uses `cost_a = τ_a + β·P_a − (1/g)·Σ_{k<a} P_k`, which is the telescoped
/// form of the sum in [`ski_cr`].
pub fn grid_crs(p: &[f64], beta: f64) -> Vec<f64> {
    let g = p.len() - 1;
    let h = 1.0 / g as f64;
    let mut prefix = 0.0;
    let mut out = Vec::with_capacity(g);
    for a in 1..=g {
        prefix += p[a - 1];
        let tau = a as f64 * h;
        out.push((tau + beta * p[a] - h * prefix) / tau.min(beta));
    }
    out
}

/// Row vector `r` with `CR_a = r·P + offset` for season end `α = a/g`.
fn cr_row(g: usize, a: usize, beta: f64) -> (Vec<f64>, f64) {
    let h = 1.0 / g as f64;
    let tau = a as f64 * h;
    let denom = tau.min(beta);
    let mut row = vec![0.0; g + 1];
    row[..a].iter_mut().for_each(|r| *r = -h / denom);
    row[a] = beta / denom;
    (row, tau / denom)
}

/// Mixture of fixed Gaussian CDFs whose weights come from an MLP of `β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCdf {
    pub arch: Mlp,
    pub params: ParamVector,
    pub means: Vec<f64>,
    pub sigma: f64,
}

impl KernelCdf {
    pub const KERNELS: usize = 50;

    pub fn new<R: Rng + ?Sized>(hidden: &[usize], kernels: usize, rng: &mut R) -> Self {
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        widths.push(kernels);
        let arch = Mlp::new("ski", &widths, Activation::Relu, Activation::Softmax);
        let mut layout = ParamLayout::new();
        arch.register(&mut layout);
        let mut params = layout.zeros();
        params.init_glorot(rng);
        let means = (0..kernels).map(|i| i as f64 / (kernels - 1).max(1) as f64).collect();
        KernelCdf {
            arch,
            params,
            means,
            sigma: 2.0 / kernels as f64,
        }
    }

    pub fn default_arch<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(&[256; 4], Self::KERNELS, rng)
    }

    pub fn weights(&self, beta: f64) -> Result<Vec<f64>, SkiError> {
        Ok(mlp_apply_values(&self.params, &self.arch, &[beta])?)
    }

    fn kernel_values(&self, alpha: f64) -> Vec<f64> {
        self.means.iter().map(|x| gauss_cdf((alpha - x) / self.sigma)).collect()
    }

    pub fn kernel_cdf(&self, beta: f64, alpha: f64) -> Result<f64, SkiError> {
        let w = self.weights(beta)?;
        Ok(w.iter().zip(self.kernel_values(alpha)).map(|(w, k)| w * k).sum())
    }

    /// CDF values at `k/g`, `k = 0..=g`.
    pub fn cdf_grid(&self, beta: f64, g: usize) -> Result<Vec<f64>, SkiError> {
        let w = self.weights(beta)?;
        Ok(grid(g)
            .into_iter()
            .map(|t| w.iter().zip(self.kernel_values(t)).map(|(w, k)| w * k).sum())
            .collect())
    }

    /// `(g+1) × K` matrix of kernel CDFs at the grid points.
    fn kernel_matrix(&self, g: usize) -> Vec<f64> {
        grid(g).into_iter().flat_map(|t| self.kernel_values(t)).collect()
    }

    /// Worst season end and its CR for a given `β`.
    pub fn worst_alpha(&self, beta: f64, g: usize) -> Result<(f64, f64), SkiError> {
        let crs = grid_crs(&self.cdf_grid(beta, g)?, beta);
        let (a, cr) = argmax(&crs);
        Ok(((a + 1) as f64 / g as f64, cr))
    }

    /// Largest CR over the `β`-grid × `α`-grid net.
    pub fn worst_over_net(&self, betas: &[f64], g: usize) -> Result<(SkiScenario, f64), SkiError> {
        let mut worst = (SkiScenario { alpha: 1.0, beta: 1.0 }, f64::NEG_INFINITY);
        for &beta in betas {
            let (alpha, cr) = self.worst_alpha(beta, g)?;
            if cr > worst.1 {
                worst = (SkiScenario { alpha, beta }, cr);
            }
        }
        Ok(worst)
    }
}

fn argmax(xs: &[f64]) -> (usize, f64) {
    xs.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, x)| if x > b.1 { (i, x) } else { b })
}

/// Buying-day probabilities of the discrete problem (rent 1 per day, buy for `B`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteStrategy {
    pub b: usize,
    pub n: usize,
    /// `probs[i]` is the probability of buying at the start of day `i + 1`.
    pub probs: Vec<f64>,
}

impl DiscreteStrategy {
    /// Ratio of expected cost to `min(k, B)` for a season of `k ≥ 1` days.
    pub fn ratio_at(&self, k: usize) -> f64 {
        let b = self.b as f64;
        let mut cost = 0.0;
        let mut bought = 0.0;
        for (i, &p) in self.probs.iter().enumerate().take(k) {
            cost += p * (i as f64 + b);
            bought += p;
        }
        cost += (1.0 - bought) * k as f64;
        cost / (k as f64).min(b)
    }

    /// Worst [`ratio_at`](Self::ratio_at) over season lengths `k = 1..=N`.
    pub fn competitive_ratio(&self) -> f64 {
        (1..=self.n).map(|k| self.ratio_at(k)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cumulative sums on the continuous grid: `F(i/N) = p_1 + … + p_i`, `F(0) = 0`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.probs.iter().map(|p| {
                acc += p;
                acc
            }))
            .collect()
    }
}

/// `c = 1/(1 − (1 − 1/B)^B)`, the optimal discrete competitive ratio.
pub fn optimal_ratio(b: usize) -> f64 {
    1.0 / (1.0 - (1.0 - 1.0 / b as f64).powi(b as i32))
}

pub fn ski_optimal_strategy(b: usize, n: usize) -> Result<DiscreteStrategy, SkiError> {
    if b < 1 || b > n {
        return Err(SkiError::InvalidScenario(format!("need 1 ≤ B ≤ N, got B={b}, N={n}")));
    }
    let bf = b as f64;
    let c = optimal_ratio(b);
    let probs = (1..=n)
        .map(|i| {
            if i <= b {
                ((bf - 1.0) / bf).powi((b - i) as i32) * c / bf
            } else {
                0.0
            }
        })
        .collect();
    Ok(DiscreteStrategy { b, n, probs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkiTrainConfig {
    pub iterations: usize,
    pub betas_per_iter: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// α-net spacing; the grid has `round(1/eps)` steps.
    pub eps: f64,
    pub lr: f64,
    /// Cosine-annealed from `lr` down to this by the last iteration.
    pub lr_final: f64,
    pub hidden: Vec<usize>,
    pub kernels: usize,
    pub seed: u64,
    pub divergence_cr: f64,
}

impl Default for SkiTrainConfig {
    fn default() -> Self {
        SkiTrainConfig {
            iterations: 20_000,
            betas_per_iter: 4,
            beta_min: 0.5,
            beta_max: 1.0,
            eps: 0.01,
            lr: 1e-3,
            lr_final: 1e-5,
            hidden: vec![256; 4],
            kernels: KernelCdf::KERNELS,
            seed: 0,
            divergence_cr: 10.0,
        }
    }
}

impl SkiTrainConfig {
    pub fn grid_steps(&self) -> usize {
        (1.0 / self.eps).round() as usize
    }

    /// Evenly spaced β values covering the training range at spacing `eps`.
    pub fn beta_net(&self) -> Vec<f64> {
        let steps = ((self.beta_max - self.beta_min) / self.eps).round() as usize;
        (0..=steps)
            .map(|k| self.beta_min + (self.beta_max - self.beta_min) * k as f64 / steps.max(1) as f64)
            .collect()
    }

    fn validate(&self) -> Result<(), SkiError> {
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max <= 1.0) {
            return Err(SkiError::InvalidScenario(format!(
                "beta range [{}, {}] not inside (0, 1]",
                self.beta_min, self.beta_max
            )));
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0) {
            return Err(SkiError::InvalidScenario("learning rates must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps <= 0.5) || self.betas_per_iter == 0 || self.kernels == 0 {
            return Err(SkiError::InvalidScenario("eps, betas_per_iter and kernels must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration record of the worst sampled pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkiTracePoint {
    pub iteration: usize,
    pub alpha: f64,
    pub beta: f64,
    pub cr: f64,
}

/// Descends the CR of the worst `(α, β)` pair among sampled β values and the α-net.
pub fn ski_train(cfg: &SkiTrainConfig) -> Result<(KernelCdf, Vec<SkiTracePoint>), SkiError> {
    ski_train_with(cfg, |_| {})
}

pub fn ski_train_with(
    cfg: &SkiTrainConfig,
    mut on_iter: impl FnMut(&SkiTracePoint),
) -> Result<(KernelCdf, Vec<SkiTracePoint>), SkiError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = KernelCdf::new(&cfg.hidden, cfg.kernels, &mut rng);
    let mut opt = AdamState::new(net.params.len(), AdamConfig::with_lr(cfg.lr));
    let g = cfg.grid_steps();
    let phi = net.kernel_matrix(g);
    let k = cfg.kernels;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iteration in 1..=cfg.iterations {
        let progress = (iteration - 1) as f64 / cfg.iterations.max(2).saturating_sub(1) as f64;
        opt.hyper.lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos());
        let mut worst = (0, 0.0, f64::NEG_INFINITY);
        for _ in 0..cfg.betas_per_iter {
            let beta = if cfg.beta_max > cfg.beta_min {
                rng.gen_range(cfg.beta_min..=cfg.beta_max)
            } else {
                cfg.beta_min
            };
            let w = net.weights(beta)?;
            let p: Vec<f64> = phi.chunks(k).map(|row| row.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
            let (a, cr) = argmax(&grid_crs(&p, beta));
            if cr > worst.2 {
                worst = (a + 1, beta, cr);
            }
        }
        let (a, beta, cr) = worst;
        let point = SkiTracePoint {
            iteration,
            alpha: a as f64 / g as f64,
            beta,
            cr,
        };
        if !cr.is_finite() || cr > cfg.divergence_cr {
            return Err(SkiError::Diverged {
                iteration,
                cr,
                checkpoint: Box::new(net),
            });
        }
        let (row, offset) = cr_row(g, a, beta);
        // fold the grid row into the kernel matrix: CR = (row·Φ)·w + offset
        let coef: Vec<f64> = (0..k)
            .map(|i| row.iter().enumerate().map(|(t, r)| r * phi[t * k + i]).sum())
            .collect();
        let (_, grad) = evaluate_and_grad(&net.params, |tape, weights| {
            let x = tape.leaf(Shape::new(1, 1), vec![beta]);
            let w = mlp_apply(tape, &net.arch, &net.params, weights, x)?;
            let c = tape.leaf(Shape::new(k, 1), coef.clone());
            let dot = tape.matmul(w, c);
            Ok::<_, AutodiffError>(tape.offset(dot, offset))
        })?;
        adam_step(net.params.values_mut(), &grad, &mut opt, false)?;
        on_iter(&point);
        trace.push(point);
    }
    Ok((net, trace))
}
