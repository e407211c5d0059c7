use rand::Rng;

use crate::autodiff::{Shape, Tape, Var};
use crate::lp::OfflineOptimum;

use super::{AdWordsInstance, EnvError, Mode, Policy, SlotView, TapedSlot, SIMPLEX_TOL};

/// Remaining budgets while slots are being fed in.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketState {
    pub remaining: Vec<f64>,
    pub slot_index: usize,
}

impl MarketState {
    pub fn new(budgets: &[f64]) -> Self {
        MarketState {
            remaining: budgets.to_vec(),
            slot_index: 0,
        }
    }

    /// Applies one slot: advertiser `i` pays `min(x_i·v_i, r_i)`.
    pub fn step(&mut self, bids_row: &[f64], allocation: &[f64]) -> Result<Vec<f64>, EnvError> {
        if bids_row.len() != self.remaining.len() || allocation.len() != self.remaining.len() {
            return Err(EnvError::InvalidAllocation(format!(
                "expected {} entries, got bids {} / allocation {}",
                self.remaining.len(),
                bids_row.len(),
                allocation.len()
            )));
        }
        check_allocation(allocation)?;
        let spend: Vec<f64> = allocation
            .iter()
            .zip(bids_row)
            .zip(&self.remaining)
            .map(|((x, v), r)| (x * v).min(*r))
            .collect();
        for (r, s) in self.remaining.iter_mut().zip(&spend) {
            *r = (*r - s).max(0.0);
        }
        self.slot_index += 1;
        Ok(spend)
    }
}

/// Free-function form of [`MarketState::step`].
pub fn step(state: &mut MarketState, bids_row: &[f64], allocation: &[f64]) -> Result<Vec<f64>, EnvError> {
    state.step(bids_row, allocation)
}

pub(crate) fn check_allocation(allocation: &[f64]) -> Result<(), EnvError> {
    if let Some(x) = allocation.iter().find(|x| x.is_nan()) {
        return Err(EnvError::InvalidAllocation(format!("weight {x}")));
    }
    if let Some(&x) = allocation.iter().find(|&&x| x < -1e-12) {
        return Err(EnvError::NegativeAllocation(x));
    }
    let total: f64 = allocation.iter().sum();
    if total > 1.0 + SIMPLEX_TOL {
        return Err(EnvError::InvalidAllocation(format!("weights sum to {total}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub revenue: f64,
    /// `m × n`, row-major.
    pub per_slot_spend: Vec<f64>,
    pub final_state: MarketState,
}

/// Feeds the slots of `inst` to `policy` in order.
pub fn rollout<P, R>(policy: &P, inst: &AdWordsInstance, mode: Mode, rng: &mut R) -> Result<RolloutResult, EnvError>
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    let n = inst.n();
    let mut state = MarketState::new(inst.budgets());
    let mut per_slot_spend = Vec::with_capacity(inst.m() * n);
    for j in 0..inst.m() {
        let view = SlotView {
            slot: j,
            bids: inst.row(j),
            remaining: &state.remaining,
            budgets: inst.budgets(),
            instance: inst,
        };
        let mut alloc = policy.allocate(&view)?;
        if mode == Mode::Integral {
            check_allocation(&alloc)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let pick = alloc.iter().position(|p| {
                acc += p;
                u < acc
            });
            alloc = vec![0.0; n];
            if let Some(i) = pick {
                alloc[i] = 1.0;
            }
        }
        let spend = state.step(inst.row(j), &alloc)?;
        per_slot_spend.extend_from_slice(&spend);
    }
    let revenue = per_slot_spend.iter().sum();
    Ok(RolloutResult {
        revenue,
        per_slot_spend,
        final_state: state,
    })
}

/// Instance quantities living on a tape: bids `m × n`, budgets `n × 1`.
#[derive(Clone, Copy, Debug)]
pub struct TapedInstance {
    pub bids: Var,
    pub budgets: Var,
}

impl TapedInstance {
    pub fn constant(tape: &mut Tape, inst: &AdWordsInstance) -> Self {
        TapedInstance {
            bids: tape.leaf(Shape::new(inst.m(), inst.n()), inst.bids().to_vec()),
            budgets: tape.column(inst.budgets().to_vec()),
        }
    }
}

/// Fractional rollout recorded on `tape`; returns the revenue node.
///
/// `inst` must hold the current values of `vars`.
pub fn rollout_on_tape<P: Policy + ?Sized>(
    tape: &mut Tape,
    policy: &P,
    inst: &AdWordsInstance,
    vars: TapedInstance,
    weights: Option<Var>,
) -> Result<Var, EnvError> {
    let n = inst.n();
    let weights = match (weights, policy.params()) {
        (Some(w), _) => Some(w),
        (None, Some(p)) => Some(tape.column(p.values().to_vec())),
        (None, None) => None,
    };
    let mut remaining = vars.budgets;
    let mut revenue = tape.constant(0.0);
    for j in 0..inst.m() {
        let row = tape.slice(vars.bids, j * n, Shape::new(n, 1));
        let slot = TapedSlot {
            bids: row,
            remaining,
            budgets: vars.budgets,
        };
        let remaining_values = tape.value(remaining).to_vec();
        let view = SlotView {
            slot: j,
            bids: inst.row(j),
            remaining: &remaining_values,
            budgets: inst.budgets(),
            instance: inst,
        };
        let alloc = policy.allocate_taped(tape, &slot, &view, weights)?;
        check_allocation(tape.value(alloc))?;
        let offer = tape.mul(alloc, row);
        let spend = tape.min(offer, remaining);
        remaining = tape.sub(remaining, spend);
        let slot_revenue = tape.sum(spend);
        revenue = tape.add(revenue, slot_revenue);
    }
    Ok(revenue)
}

/// Competitive ratio node `revenue / OPT`. With `live_instance`, OPT carries its
/// envelope gradient back to the bid and budget nodes; otherwise it is a constant.
pub fn taped_cr<P: Policy + ?Sized>(
    tape: &mut Tape,
    policy: &P,
    inst: &AdWordsInstance,
    opt: &OfflineOptimum,
    vars: TapedInstance,
    weights: Option<Var>,
    live_instance: bool,
) -> Result<Var, EnvError> {
    let revenue = rollout_on_tape(tape, policy, inst, vars, weights)?;
    if opt.value <= 0.0 {
        return Ok(tape.constant(1.0));
    }
    let opt_node = if live_instance {
        tape.external(
            opt.value,
            vec![
                (vars.bids, opt.bid_gradient(inst.n())),
                (vars.budgets, opt.budget_duals.clone()),
            ],
        )
    } else {
        tape.constant(opt.value)
    };
    Ok(tape.div(revenue, opt_node))
}
