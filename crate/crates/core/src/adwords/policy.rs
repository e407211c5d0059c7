use crate::autodiff::{ParamVector, Tape, Var};

use super::{AdWordsInstance, EnvError};

/// What an online policy may look at when slot `slot` arrives.
///
/// `instance` is handed through only so that clairvoyant reference policies
/// can be expressed; online policies must not read rows past `slot`.
pub struct SlotView<'a> {
    pub slot: usize,
    pub bids: &'a [f64],
    pub remaining: &'a [f64],
    pub budgets: &'a [f64],
    pub instance: &'a AdWordsInstance,
}

/// Tape handles of the same slot quantities, each an `n × 1` column.
#[derive(Clone, Copy, Debug)]
pub struct TapedSlot {
    pub bids: Var,
    pub remaining: Var,
    pub budgets: Var,
}

/// An allocation rule: per slot, a weight vector with entries `≥ 0` summing to at most one.
pub trait Policy: Sync {
    fn name(&self) -> String;

    fn allocate(&self, slot: &SlotView<'_>) -> Result<Vec<f64>, EnvError>;

    /// Trainable parameters, if the policy has any.
    fn params(&self) -> Option<&ParamVector> {
        None
    }

    /// Records the allocation on a tape. `weights` is the tape node holding
    /// [`Policy::params`]. Rules without parameters enter as constants.
    fn allocate_taped(
        &self,
        tape: &mut Tape,
        slot: &TapedSlot,
        view: &SlotView<'_>,
        weights: Option<Var>,
    ) -> Result<Var, EnvError> {
        let _ = (slot, weights);
        let alloc = self.allocate(view)?;
        Ok(tape.column(alloc))
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn name(&self) -> String {
        (**self).name()
    }

    fn allocate(&self, slot: &SlotView<'_>) -> Result<Vec<f64>, EnvError> {
        (**self).allocate(slot)
    }

    fn params(&self) -> Option<&ParamVector> {
        (**self).params()
    }

    fn allocate_taped(
        &self,
        tape: &mut Tape,
        slot: &TapedSlot,
        view: &SlotView<'_>,
        weights: Option<Var>,
    ) -> Result<Var, EnvError> {
        (**self).allocate_taped(tape, slot, view, weights)
    }
}

impl<P: Policy + ?Sized + Send> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn allocate(&self, slot: &SlotView<'_>) -> Result<Vec<f64>, EnvError> {
        (**self).allocate(slot)
    }

    fn params(&self) -> Option<&ParamVector> {
        (**self).params()
    }

    fn allocate_taped(
        &self,
        tape: &mut Tape,
        slot: &TapedSlot,
        view: &SlotView<'_>,
        weights: Option<Var>,
    ) -> Result<Var, EnvError> {
        (**self).allocate_taped(tape, slot, view, weights)
    }
}
