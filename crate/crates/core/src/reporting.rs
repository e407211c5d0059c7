//! Benchmark tables and behavioural probes, emitted as tidy CSV rows.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adwords::{mean_std, ratio, rollout, AdWordsInstance, EnvError, EvalRecord, Mode, Policy, SlotView};
use crate::distributions::DistributionSpec;
use crate::lp::offline_optimum;
use crate::trainer::ExperienceArray;

/// Serialises `rows` as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates every policy on the same `samples` instances of every distribution.
///
/// `mean_revenue` and `std` cover all `samples × runs` rollouts; `cr` is the
/// mean over instances of expected revenue divided by that instance's optimum.
pub fn eval_table<R: Rng + ?Sized>(
    policies: &[&dyn Policy],
    specs: &[DistributionSpec],
    samples: usize,
    runs: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<EvalRecord>, EnvError> {
    if samples == 0 {
        return Err(EnvError::InvalidInstance("samples must be at least 1".into()));
    }
    let runs = if mode == Mode::Fractional { 1 } else { runs.max(1) };
    let mut records = Vec::new();
    for spec in specs {
        let mut instances = Vec::with_capacity(samples);
        for _ in 0..samples {
            let inst = spec.sample(rng)?;
            let opt = offline_optimum(&inst)?.value;
            instances.push((inst, opt));
        }
        for policy in policies {
            let mut revenues = Vec::with_capacity(samples * runs);
            let mut crs = Vec::with_capacity(samples);
            for (inst, opt) in &instances {
                let mut total = 0.0;
                for _ in 0..runs {
                    let r = rollout(*policy, inst, mode, rng)?.revenue;
                    if r > opt + 1e-7 * (1.0 + opt) {
                        return Err(EnvError::Dominance { revenue: r, opt: *opt });
                    }
                    revenues.push(r);
                    total += r;
                }
                crs.push(ratio(total / runs as f64, *opt));
            }
            let (mean, std) = mean_std(&revenues);
            let (m, n) = (instances[0].0.m(), instances[0].0.n());
            records.push(EvalRecord {
                algorithm: policy.name(),
                distribution: spec.label(),
                m,
                n,
                mode,
                mean_revenue: mean,
                std,
                count: revenues.len(),
                opt: instances.iter().map(|(_, o)| o).sum::<f64>() / samples as f64,
                cr: crs.iter().sum::<f64>() / samples as f64,
            });
        }
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Vary advertiser 0's bid.
    Bid,
    /// Vary advertiser 0's remaining-budget fraction.
    Budget,
}

/// Two-advertiser single-slot probe. Advertiser 1 is held at
/// `(opponent_bid, opponent_fraction)`; advertiser 0 keeps `own_bid` or
/// `own_fraction` fixed and sweeps the other over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSpec {
    pub kind: SweepKind,
    pub opponent_bid: f64,
    pub opponent_fraction: f64,
    pub own_bid: f64,
    pub own_fraction: f64,
    pub budget: f64,
    pub points: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            kind: SweepKind::Bid,
            opponent_bid: 0.5,
            opponent_fraction: 0.5,
            own_bid: 0.5,
            own_fraction: 0.5,
            budget: 5.0,
            points: 101,
        }
    }
}

impl ProbeSpec {
    fn validate(&self) -> Result<(), EnvError> {
        let unit = [self.opponent_bid, self.opponent_fraction, self.own_bid, self.own_fraction];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(EnvError::InvalidInstance("probe values must lie in [0, 1]".into()));
        }
        if self.points < 2 || self.budget <= 0.0 {
            return Err(EnvError::InvalidInstance("probe needs ≥ 2 points and a positive budget".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub x: f64,
    pub p0: f64,
    pub p1: f64,
}

/// Allocation of a single two-advertiser slot.
fn two_way(policy: &dyn Policy, bids: [f64; 2], fractions: [f64; 2], budget: f64) -> Result<Vec<f64>, EnvError> {
    let inst = AdWordsInstance::new(1, 2, bids.to_vec(), vec![budget; 2])?;
    let remaining = [fractions[0] * budget, fractions[1] * budget];
    policy.allocate(&SlotView {
        slot: 0,
        bids: inst.row(0),
        remaining: &remaining,
        budgets: inst.budgets(),
        instance: &inst,
    })
}

pub fn probe_single_slot(policy: &dyn Policy, spec: &ProbeSpec) -> Result<Vec<ProbePoint>, EnvError> {
    spec.validate()?;
    (0..spec.points)
        .map(|k| {
            let x = k as f64 / (spec.points - 1) as f64;
            let (bid, frac) = match spec.kind {
                SweepKind::Bid => (x, spec.own_fraction),
                SweepKind::Budget => (spec.own_bid, x),
            };
            let a = two_way(
                policy,
                [bid, spec.opponent_bid],
                [frac, spec.opponent_fraction],
                spec.budget,
            )?;
            Ok(ProbePoint { x, p0: a[0], p1: a[1] })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContourSpec {
    pub opponent_bid: f64,
    pub opponent_fraction: f64,
    pub budget: f64,
    pub resolution: usize,
}

impl Default for ContourSpec {
    fn default() -> Self {
        ContourSpec {
            opponent_bid: 0.8,
            opponent_fraction: 0.5,
            budget: 5.0,
            resolution: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub bid: f64,
    pub fraction: f64,
    pub p0: f64,
}

/// Probability that advertiser 0 wins at every `(bid, remaining fraction)` grid point.
pub fn contour_grid(policy: &dyn Policy, spec: &ContourSpec) -> Result<Vec<ContourPoint>, EnvError> {
    if spec.resolution < 2 {
        return Err(EnvError::InvalidInstance("contour resolution must be at least 2".into()));
    }
    let step = 1.0 / (spec.resolution - 1) as f64;
    let mut out = Vec::with_capacity(spec.resolution * spec.resolution);
    for yi in 0..spec.resolution {
        for xi in 0..spec.resolution {
            let (bid, fraction) = (xi as f64 * step, yi as f64 * step);
            let a = two_way(
                policy,
                [bid, spec.opponent_bid],
                [fraction, spec.opponent_fraction],
                spec.budget,
            )?;
            out.push(ContourPoint { bid, fraction, p0: a[0] });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpendPoint {
    pub advertiser: usize,
    pub slot: usize,
    /// Mean cumulative spend after this slot, as a fraction of the budget.
    pub spent_fraction: f64,
}

/// Average cumulative spend curves over `runs` integral rollouts.
pub fn spending_trajectories<R: Rng + ?Sized>(
    policy: &dyn Policy,
    inst: &AdWordsInstance,
    runs: usize,
    rng: &mut R,
) -> Result<Vec<SpendPoint>, EnvError> {
    let (m, n) = (inst.m(), inst.n());
    let runs = runs.max(1);
    let mut acc = vec![0.0; m * n];
    for _ in 0..runs {
        let res = rollout(policy, inst, Mode::Integral, rng)?;
        let mut cum = vec![0.0; n];
        for j in 0..m {
            for i in 0..n {
                cum[i] += res.per_slot_spend[j * n + i];
                acc[j * n + i] += cum[i];
            }
        }
    }
    let mut out = Vec::with_capacity(m * n);
    for i in 0..n {
        for j in 0..m {
            out.push(SpendPoint {
                advertiser: i,
                slot: j,
                spent_fraction: acc[j * n + i] / runs as f64 / inst.budgets()[i],
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrTracePoint {
    pub policy: String,
    pub batch: usize,
    pub min_cr: f64,
    pub mean_cr: f64,
}

/// Fractional CR of each policy on consecutive groups of stored instances;
/// reports the minimum (and mean) per group.
pub fn cr_trace(
    policies: &[&dyn Policy],
    experience: &ExperienceArray,
    group: usize,
) -> Result<Vec<CrTracePoint>, EnvError> {
    if experience.is_empty() {
        return Err(EnvError::InvalidInstance("experience array is empty".into()));
    }
    let group = group.max(1);
    let mut out = Vec::new();
    for policy in policies {
        for (batch, chunk) in experience.entries().chunks(group).enumerate() {
            let crs = chunk
                .iter()
                .map(|e| crate::adwords::fractional_cr(*policy, &e.instance, e.opt))
                .collect::<Result<Vec<_>, _>>()?;
            out.push(CrTracePoint {
                policy: policy.name(),
                batch,
                min_cr: crs.iter().copied().fold(f64::INFINITY, f64::min),
                mean_cr: crs.iter().sum::<f64>() / crs.len() as f64,
            });
        }
    }
    Ok(out)
}
