//! AdWords evaluation environment: market state, rollouts and competitive ratios.

mod env;
mod eval;
mod instance;
mod policy;

pub use env::{rollout, rollout_on_tape, step, taped_cr, MarketState, RolloutResult, TapedInstance};
pub use eval::{
    competitive_ratio, cr_param_grad, fractional_cr, mean_std, ratio, rollout_grad, rollout_grad_with_opt, EvalRecord, GradTarget,
};
pub use instance::AdWordsInstance;
pub use policy::{Policy, SlotView, TapedSlot};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::lp::LpError;

pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("negative allocation weight {0}")]
    NegativeAllocation(f64),
    #[error("allocation is not a sub-simplex vector: {0}")]
    InvalidAllocation(String),
    #[error("policy {policy} rejected the input: {reason}")]
    PolicyInput { policy: String, reason: String },
    #[error("rollout revenue {revenue} exceeds the offline optimum {opt}")]
    Dominance { revenue: f64, opt: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Allocation vector applied fractionally; differentiable.
    Fractional,
    /// One advertiser sampled from the allocation vector per slot.
    Integral,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Fractional => "fractional",
            Mode::Integral => "integral",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fractional" => Ok(Mode::Fractional),
            "integral" => Ok(Mode::Integral),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}
