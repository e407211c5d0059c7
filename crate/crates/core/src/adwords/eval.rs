use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{evaluate_and_grad, Shape, Tape};
use crate::lp::{offline_optimum, OfflineOptimum};

use super::{rollout, rollout_on_tape, taped_cr, AdWordsInstance, EnvError, Mode, Policy, TapedInstance};

/// Revenue statistics and competitive ratio of one policy on one instance or
/// distribution. One CSV row per record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub algorithm: String,
    pub distribution: String,
    pub m: usize,
    pub n: usize,
    pub mode: Mode,
    pub mean_revenue: f64,
    /// Standard deviation over every rollout that went into the mean.
    pub std: f64,
    pub count: usize,
    pub opt: f64,
    pub cr: f64,
}

/// `revenue / opt`, with the empty-instance convention `cr = 1` when `opt = 0`.
pub fn ratio(revenue: f64, opt: f64) -> f64 {
    if opt <= 0.0 {
        1.0
    } else {
        revenue / opt
    }
}

/// Offline optimum dominance: a simulated revenue can never beat the LP.
pub(crate) fn check_dominance(revenue: f64, opt: f64) -> Result<(), EnvError> {
    if revenue > opt + 1e-7 * (1.0 + opt) {
        return Err(EnvError::Dominance { revenue, opt });
    }
    Ok(())
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Fractional-mode CR against a precomputed optimum.
pub fn fractional_cr<P: Policy + ?Sized>(policy: &P, inst: &AdWordsInstance, opt: f64) -> Result<f64, EnvError> {
    // fractional rollouts never touch the rng
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let res = rollout(policy, inst, Mode::Fractional, &mut rng)?;
    check_dominance(res.revenue, opt)?;
    Ok(ratio(res.revenue, opt))
}

/// Revenues of `runs` rollouts (a single one in fractional mode).
pub(crate) fn sample_revenues<P, R>(
    policy: &P,
    inst: &AdWordsInstance,
    mode: Mode,
    runs: usize,
    opt: f64,
    rng: &mut R,
) -> Result<Vec<f64>, EnvError>
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    let runs = if mode == Mode::Fractional { 1 } else { runs.max(1) };
    (0..runs)
        .map(|_| {
            let r = rollout(policy, inst, mode, rng)?.revenue;
            check_dominance(r, opt)?;
            Ok(r)
        })
        .collect()
}

pub fn competitive_ratio<P, R>(
    policy: &P,
    inst: &AdWordsInstance,
    mode: Mode,
    runs: usize,
    rng: &mut R,
) -> Result<EvalRecord, EnvError>
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    let opt = offline_optimum(inst)?.value;
    let revenues = sample_revenues(policy, inst, mode, runs, opt, rng)?;
    let (mean, std) = mean_std(&revenues);
    Ok(EvalRecord {
        algorithm: policy.name(),
        distribution: "instance".into(),
        m: inst.m(),
        n: inst.n(),
        mode,
        mean_revenue: mean,
        std,
        count: revenues.len(),
        opt,
        cr: ratio(mean, opt),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTarget {
    /// d CR / d policy parameters, offline optimum held constant.
    Params,
    /// d CR / d bid matrix (quotient rule through the LP envelope gradient).
    Instance,
}

/// Fractional CR and its gradient with respect to the policy parameters,
/// with the offline optimum `opt` held constant.
pub fn cr_param_grad<P: Policy + ?Sized>(policy: &P, inst: &AdWordsInstance, opt: f64) -> Result<(f64, Vec<f64>), EnvError> {
    let params = policy.params().ok_or_else(|| EnvError::PolicyInput {
        policy: policy.name(),
        reason: "policy has no trainable parameters".into(),
    })?;
    evaluate_and_grad(params, |tape, w| {
        let vars = TapedInstance::constant(tape, inst);
        let revenue = rollout_on_tape(tape, policy, inst, vars, Some(w))?;
        if opt <= 0.0 {
            let flat = tape.scale(revenue, 0.0);
            return Ok(tape.offset(flat, 1.0));
        }
        check_dominance(tape.scalar(revenue), opt)?;
        Ok(tape.scale(revenue, 1.0 / opt))
    })
}

/// Gradient of the fractional CR. Policies without parameters yield an
/// empty vector for [`GradTarget::Params`].
pub fn rollout_grad<P: Policy + ?Sized>(
    policy: &P,
    inst: &AdWordsInstance,
    target: GradTarget,
) -> Result<Vec<f64>, EnvError> {
    let opt = offline_optimum(inst)?;
    rollout_grad_with_opt(policy, inst, &opt, target).map(|(_, g)| g)
}

/// As [`rollout_grad`] with a precomputed optimum; also returns the CR.
pub fn rollout_grad_with_opt<P: Policy + ?Sized>(
    policy: &P,
    inst: &AdWordsInstance,
    opt: &OfflineOptimum,
    target: GradTarget,
) -> Result<(f64, Vec<f64>), EnvError> {
    match target {
        GradTarget::Params => {
            if policy.params().is_none() {
                let cr = fractional_cr(policy, inst, opt.value)?;
                return Ok((cr, Vec::new()));
            }
            cr_param_grad(policy, inst, opt.value)
        }
        GradTarget::Instance => {
            let mut tape = Tape::new();
            let bids = tape.leaf(Shape::new(inst.m(), inst.n()), inst.bids().to_vec());
            let budgets = tape.column(inst.budgets().to_vec());
            let vars = TapedInstance { bids, budgets };
            let cr = taped_cr(&mut tape, policy, inst, opt, vars, None, true)?;
            tape.check_finite()?;
            let grads = tape.backward(cr);
            Ok((tape.scalar(cr), grads.wrt(bids)))
        }
    }
}
