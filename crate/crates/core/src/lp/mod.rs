//! Small dense LPs and the AdWords offline optimum built on them.

mod simplex;

pub use simplex::{solve, LpProblem, LpSolution, LpStatus, MAX_ITERATIONS, PIVOT_TOL};

use thiserror::Error;

use crate::adwords::AdWordsInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("simplex exceeded {0} iterations (numerical trouble?)")]
    IterationLimit(usize),
    #[error("inconsistent LP dimensions")]
    Dimensions,
    #[error("LP coefficients must be finite")]
    NonFinite,
    #[error("offline LP finished with status {0:?}")]
    NotOptimal(LpStatus),
}

pub const NEGLIGIBLE_BID: f64 = 1e-8;

/// Fractional offline optimum of an AdWords instance.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineOptimum {
    pub value: f64,
    /// `m × n`, row-major: fraction of slot `j` given to advertiser `i`.
    pub allocation: Vec<f64>,
    /// Multiplier of each advertiser's budget row.
    pub budget_duals: Vec<f64>,
    pub degenerate: bool,
}

impl OfflineOptimum {
    /// `∂OPT/∂v[j][i] = x*[j][i]·(1 − λ*[i])` (envelope theorem on the Lagrangian).
    pub fn bid_gradient(&self, n: usize) -> Vec<f64> {
        self.allocation
            .iter()
            .enumerate()
            .map(|(k, x)| x * (1.0 - self.budget_duals[k % n]))
            .collect()
    }
}

/// Solves `max Σ v·x` s.t. each slot allocated at most once and each
/// advertiser's spend `Σ_j v[j][i]·x[j][i] ≤ B[i]`.
///
/// Bids below `NEGLIGIBLE_BID` times the largest bid are left out: they move
/// the optimum by at most `m·NEGLIGIBLE_BID·max_bid` but wreck the tableau's
/// conditioning.
pub fn offline_optimum(inst: &AdWordsInstance) -> Result<OfflineOptimum, LpError> {
    let (m, n) = (inst.m(), inst.n());
    let floor = NEGLIGIBLE_BID * inst.max_bid();
    let vars: Vec<(usize, usize)> = (0..m)
        .flat_map(|j| (0..n).map(move |i| (j, i)))
        .filter(|&(j, i)| inst.bid(j, i) > floor)
        .collect();
    if vars.is_empty() {
        return Ok(OfflineOptimum {
            value: 0.0,
            allocation: vec![0.0; m * n],
            budget_duals: vec![0.0; n],
            degenerate: false,
        });
    }
    let c: Vec<f64> = vars.iter().map(|&(j, i)| inst.bid(j, i)).collect();
    let mut a = vec![vec![0.0; vars.len()]; m + n];
    for (k, &(j, i)) in vars.iter().enumerate() {
        a[j][k] = 1.0;
        a[m + i][k] = inst.bid(j, i);
    }
    let mut b = vec![1.0; m];
    b.extend_from_slice(inst.budgets());
    let sol = solve(&LpProblem { c, a, b })?;
    if sol.status != LpStatus::Optimal {
        return Err(LpError::NotOptimal(sol.status));
    }
    let mut allocation = vec![0.0; m * n];
    for (k, &(j, i)) in vars.iter().enumerate() {
        allocation[j * n + i] = sol.x[k];
    }
    Ok(OfflineOptimum {
        value: sol.value,
        allocation,
        budget_duals: sol.duals[m..].to_vec(),
        degenerate: sol.degenerate,
    })
}

/// Gradient of the offline optimum with respect to the bid matrix.
pub fn offline_optimum_grad(inst: &AdWordsInstance) -> Result<(Vec<f64>, bool), LpError> {
    let opt = offline_optimum(inst)?;
    Ok((opt.bid_gradient(inst.n()), opt.degenerate))
}
