//! Hand-written reference policies: Greedy, MSVV, Balance, and an offline
//! clairvoyant that replays the LP allocation.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::adwords::{EnvError, Policy, SlotView};
use crate::lp::offline_optimum;

/// Relative slack under which two scores count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Greedy,
    Msvv,
    Balance,
}

impl BaselineKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "greedy" => Some(BaselineKind::Greedy),
            "msvv" => Some(BaselineKind::Msvv),
            "balance" => Some(BaselineKind::Balance),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Greedy => "greedy",
            BaselineKind::Msvv => "msvv",
            BaselineKind::Balance => "balance",
        }
    }
}

/// Uniform weight on every maximiser; all-zero when no score is positive.
fn uniform_argmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return vec![0.0; scores.len()];
    }
    let tied: Vec<bool> = scores.iter().map(|&s| s >= max - TIE_TOL * max).collect();
    let k = tied.iter().filter(|&&t| t).count() as f64;
    tied.iter().map(|&t| if t { 1.0 / k } else { 0.0 }).collect()
}

/// Highest budget-truncated bid `min(v, r)`, ties uniform.
pub fn greedy_allocate(bids: &[f64], remaining: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = bids.iter().zip(remaining).map(|(v, r)| v.min(*r)).collect();
    uniform_argmax(&scores)
}

/// Greedy on scaled bids `v·(1 − e^{−r/B})`.
pub fn msvv_allocate(bids: &[f64], remaining: &[f64], budgets: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = bids
        .iter()
        .zip(remaining)
        .zip(budgets)
        .map(|((v, r), b)| v * (1.0 - (-r / b).exp()))
        .collect();
    uniform_argmax(&scores)
}

/// Among advertisers bidding 1 with budget left, the one with most remaining.
pub fn balance_allocate(bids: &[f64], remaining: &[f64]) -> Result<Vec<f64>, EnvError> {
    if let Some(v) = bids.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(EnvError::PolicyInput {
            policy: "balance".into(),
            reason: format!("bid {v} is not 0 or 1"),
        });
    }
    let scores: Vec<f64> = bids
        .iter()
        .zip(remaining)
        .map(|(&v, &r)| if v == 1.0 && r > 0.0 { r } else { 0.0 })
        .collect();
    Ok(uniform_argmax(&scores))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Baseline(pub BaselineKind);

impl Baseline {
    pub fn by_name(name: &str) -> Option<Self> {
        BaselineKind::from_name(name).map(Baseline)
    }
}

impl Policy for Baseline {
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    fn allocate(&self, slot: &SlotView<'_>) -> Result<Vec<f64>, EnvError> {
        match self.0 {
            BaselineKind::Greedy => Ok(greedy_allocate(slot.bids, slot.remaining)),
            BaselineKind::Msvv => Ok(msvv_allocate(slot.bids, slot.remaining, slot.budgets)),
            BaselineKind::Balance => balance_allocate(slot.bids, slot.remaining),
        }
    }
}

/// Replays the fractional offline optimum of whatever instance it is run on.
/// Not an online algorithm; used as a reference that always attains CR 1.
#[derive(Default)]
pub struct Clairvoyant {
    cache: Mutex<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>>,
}

impl Clairvoyant {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Policy for Clairvoyant {
    fn name(&self) -> String {
        "clairvoyant".into()
    }

    fn allocate(&self, slot: &SlotView<'_>) -> Result<Vec<f64>, EnvError> {
        let inst = slot.instance;
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        let stale = match cache.as_ref() {
            Some((bids, budgets, _)) => bids != inst.bids() || budgets != inst.budgets(),
            None => true,
        };
        if stale {
            let opt = offline_optimum(inst)?;
            *cache = Some((inst.bids().to_vec(), inst.budgets().to_vec(), opt.allocation));
        }
        let (_, _, allocation) = cache.as_ref().expect("filled above");
        let n = inst.n();
        Ok(allocation[slot.slot * n..(slot.slot + 1) * n].to_vec())
    }
}
