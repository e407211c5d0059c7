use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamLayout, ParamVector, Shape, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    /// Softmax over the whole layer output (single-row inputs).
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Stack of affine layers. Weights live in segments `{name}.{i}.w` / `{name}.{i}.b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl Mlp {
    /// `widths` lists every layer boundary; `hidden` applies between layers and
    /// `head` after the last one.
    pub fn new(name: impl Into<String>, widths: &[usize], hidden: Activation, head: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                inputs: w[0],
                outputs: w[1],
                activation: if i == last { head } else { hidden },
            })
            .collect();
        Mlp {
            name: name.into(),
            layers,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn register(&self, layout: &mut ParamLayout) {
        for (i, l) in self.layers.iter().enumerate() {
            layout.push(format!("{}.{}.w", self.name, i), l.inputs, l.outputs);
            layout.push(format!("{}.{}.b", self.name, i), 1, l.outputs);
        }
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{}.w", self.name, layer)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{}.b", self.name, layer)
    }
}

/// Records the forward pass of `mlp` on `input` (`rows × input_width`).
/// `params` supplies the segment table for the flat parameter node `weights`.
pub fn mlp_apply(
    tape: &mut Tape,
    mlp: &Mlp,
    params: &ParamVector,
    weights: Var,
    input: Var,
) -> Result<Var, AutodiffError> {
    let shape = tape.shape(input);
    if shape.cols != mlp.input_width() {
        return Err(AutodiffError::ShapeMismatch {
            expected: mlp.input_width(),
            got: shape.cols,
        });
    }
    let mut h = input;
    for (i, layer) in mlp.layers.iter().enumerate() {
        let w = params.segment(&mlp.weight_name(i))?;
        let b = params.segment(&mlp.bias_name(i))?;
        let wv = tape.slice(weights, w.offset, Shape::new(layer.inputs, layer.outputs));
        let bv = tape.slice(weights, b.offset, Shape::new(1, layer.outputs));
        let z = tape.matmul(h, wv);
        let z = tape.add_bias(z, bv);
        h = match layer.activation {
            Activation::Identity => z,
            Activation::Relu => tape.relu(z),
            Activation::Sigmoid => tape.sigmoid(z),
            Activation::Softmax => tape.softmax(z),
        };
    }
    Ok(h)
}

/// Plain forward pass of a single input row.
pub fn mlp_apply_values(params: &ParamVector, mlp: &Mlp, input: &[f64]) -> Result<Vec<f64>, AutodiffError> {
    if input.len() != mlp.input_width() {
        return Err(AutodiffError::ShapeMismatch {
            expected: mlp.input_width(),
            got: input.len(),
        });
    }
    let mut tape = Tape::new();
    let weights = tape.leaf(Shape::new(params.len(), 1), params.values().to_vec());
    let x = tape.leaf(Shape::new(1, input.len()), input.to_vec());
    let out = mlp_apply(&mut tape, mlp, params, weights, x)?;
    tape.check_finite()?;
    Ok(tape.value(out).to_vec())
}
