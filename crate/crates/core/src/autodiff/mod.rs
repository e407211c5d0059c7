//! Reverse-mode differentiation, dense layers and the Adam optimizer.

mod adam;
mod mlp;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{mlp_apply, mlp_apply_values, Activation, LayerSpec, Mlp};
pub use params::{ParamLayout, ParamVector, Segment};
pub use tape::{
    gauss_cdf, gauss_pdf, order_free_sum, sigmoid, softmax, Gradients, Shape, Tape, Var,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("parameter vector is empty")]
    EmptyParams,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("program output is not a scalar")]
    NotScalar,
    #[error("unknown parameter segment `{0}`")]
    UnknownSegment(String),
}

/// Runs `program` on a fresh tape whose first node holds `params`, then
/// differentiates the scalar it returns with respect to every parameter.
pub fn evaluate_and_grad<F, E>(params: &ParamVector, program: F) -> Result<(f64, Vec<f64>), E>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    if params.is_empty() {
        return Err(AutodiffError::EmptyParams.into());
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(Shape::new(params.len(), 1), params.values().to_vec());
    let out = program(&mut tape, leaf)?;
    tape.check_finite()?;
    if tape.shape(out) != Shape::new(1, 1) {
        return Err(AutodiffError::NotScalar.into());
    }
    let grads = tape.backward(out);
    Ok((tape.scalar(out), grads.wrt(leaf)))
}

#[cfg(test)]
mod tests;
