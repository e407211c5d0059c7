//! Dynamic reverse-mode tape over small dense row-major matrices.
//!
//! Every operation evaluates eagerly and records enough to run the chain rule
//! backwards. Node ids are handed out in push order, so inputs always precede
//! outputs and a single reverse sweep visits each node once.

use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn len(self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    fn is_scalar(self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Exp,
    Log,
    Relu,
    Sigmoid,
    GaussCdf,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Softmax(Var),
    Sum(Var),
    Broadcast(Var),
    Slice(Var, usize),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    External(Vec<(Var, Vec<f64>)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(b, ..) => match b {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
                Binary::Div => "div",
                Binary::Min => "min",
                Binary::Max => "max",
            },
            Op::Unary(u, _) => match u {
                Unary::Exp => "exp",
                Unary::Log => "log",
                Unary::Relu => "relu",
                Unary::Sigmoid => "sigmoid",
                Unary::GaussCdf => "gauss_cdf",
            },
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Softmax(_) => "softmax",
            Op::Sum(_) => "sum",
            Op::Broadcast(_) => "broadcast",
            Op::Slice(..) => "slice",
            Op::Transpose(_) => "transpose",
            Op::ConcatCols(_) => "concat_cols",
            Op::External(_) => "external",
        }
    }
}

struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
}

/// Standard normal CDF.
pub fn gauss_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn gauss_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sums after sorting, so the result does not depend on element order.
pub fn order_free_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

/// Softmax whose normaliser is summed in sorted order (permutation-exact).
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total = order_free_sum(&exps);
    exps.iter().map(|e| e / total).collect()
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_nonfinite: Option<(usize, &'static str)>,
}

/// Result of a backward sweep: one gradient buffer per node reached.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient of the swept output with respect to `var`; zeros if unreached.
    pub fn wrt(&self, var: Var) -> Vec<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.shapes[var.0].len()],
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        assert!(self.shape(v).is_scalar(), "node {} is not scalar", v.0);
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    /// First node whose forward value was NaN or infinite.
    pub fn check_finite(&self) -> Result<(), AutodiffError> {
        match self.first_nonfinite {
            Some((node, op)) => Err(AutodiffError::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.len(), value.len());
        let id = self.nodes.len();
        if self.first_nonfinite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_nonfinite = Some((id, op.name()));
        }
        self.nodes.push(Node { op, shape, value });
        Var(id)
    }

    pub fn leaf(&mut self, shape: Shape, value: Vec<f64>) -> Var {
        assert_eq!(shape.len(), value.len(), "leaf shape/value mismatch");
        self.push(Op::Leaf, shape, value)
    }

    pub fn column(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.leaf(Shape::new(n, 1), value)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(Shape::new(1, 1), vec![value])
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = if sa == sb || sb.is_scalar() {
            sa
        } else if sa.is_scalar() {
            sb
        } else {
            panic!("{:?} shape mismatch: {:?} vs {:?}", kind, sa, sb);
        };
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let pick = |v: &Vec<f64>, i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let value = (0..shape.len())
            .map(|i| {
                let (x, y) = (pick(va, i), pick(vb, i));
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                    Binary::Min => x.min(y),
                    Binary::Max => x.max(y),
                }
            })
            .collect();
        self.push(Op::Binary(kind, a, b), shape, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }

    /// Elementwise min; at ties the gradient flows to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Min, a, b)
    }

    /// Elementwise max; at ties the gradient flows to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Max, a, b)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.0]
            .value
            .iter()
            .map(|&x| match kind {
                Unary::Exp => x.exp(),
                Unary::Log => x.ln(),
                Unary::Relu => x.max(0.0),
                Unary::Sigmoid => sigmoid(x),
                Unary::GaussCdf => gauss_cdf(x),
            })
            .collect();
        self.push(Op::Unary(kind, a), shape, value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    /// ReLU with zero gradient at the kink.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn gauss_cdf(&mut self, a: Var) -> Var {
        self.unary(Unary::GaussCdf, a)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x * k).collect();
        self.push(Op::Scale(a, k), shape, value)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x + k).collect();
        self.push(Op::Offset(a), shape, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa.cols, sb.rows, "matmul shape mismatch: {:?} x {:?}", sa, sb);
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![0.0; sa.rows * sb.cols];
        for r in 0..sa.rows {
            let row = &mut out[r * sb.cols..(r + 1) * sb.cols];
            for k in 0..sa.cols {
                let x = va[r * sa.cols + k];
                if x == 0.0 {
                    continue;
                }
                let brow = &vb[k * sb.cols..(k + 1) * sb.cols];
                for (o, y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(Op::MatMul(a, b), Shape::new(sa.rows, sb.cols), out)
    }

    /// Adds a `1×c` bias row to every row of an `r×c` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        assert!(sb.rows == 1 && sb.cols == sa.cols, "bias shape mismatch");
        let vb = &self.nodes[bias.0].value;
        let value = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + vb[i % sa.cols])
            .collect();
        self.push(Op::AddBias(a, bias), sa, value)
    }

    /// Softmax over every entry of `a`.
    pub fn softmax(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let value = softmax(&self.nodes[a.0].value);
        self.push(Op::Softmax(a), shape, value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = order_free_sum(&self.nodes[a.0].value);
        self.push(Op::Sum(a), Shape::new(1, 1), vec![value])
    }

    /// Repeats a scalar into the given shape.
    pub fn broadcast(&mut self, a: Var, shape: Shape) -> Var {
        assert!(self.shape(a).is_scalar(), "broadcast needs a scalar");
        let x = self.nodes[a.0].value[0];
        self.push(Op::Broadcast(a), shape, vec![x; shape.len()])
    }

    /// Contiguous window of `shape.len()` entries starting at `offset`, reshaped.
    pub fn slice(&mut self, a: Var, offset: usize, shape: Shape) -> Var {
        let src = &self.nodes[a.0].value;
        assert!(offset + shape.len() <= src.len(), "slice out of range");
        let value = src[offset..offset + shape.len()].to_vec();
        self.push(Op::Slice(a, offset), shape, value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        let src = &self.nodes[a.0].value;
        let mut value = vec![0.0; s.len()];
        for r in 0..s.rows {
            for c in 0..s.cols {
                value[c * s.rows + r] = src[r * s.cols + c];
            }
        }
        self.push(Op::Transpose(a), Shape::new(s.cols, s.rows), value)
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).rows;
        let cols: usize = parts
            .iter()
            .map(|p| {
                assert_eq!(self.shape(*p).rows, rows, "concat row mismatch");
                self.shape(*p).cols
            })
            .sum();
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let s = self.shape(*p);
                value.extend_from_slice(&self.nodes[p.0].value[r * s.cols..(r + 1) * s.cols]);
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Shape::new(rows, cols), value)
    }

    /// Scalar computed outside the tape, with its gradient supplied per input.
    pub fn external(&mut self, value: f64, inputs: Vec<(Var, Vec<f64>)>) -> Var {
        for (v, g) in &inputs {
            assert_eq!(self.shape(*v).len(), g.len(), "external gradient shape mismatch");
        }
        self.push(Op::External(inputs), Shape::new(1, 1), vec![value])
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert!(self.shape(output).is_scalar(), "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.shape).collect(),
        }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut acc = |v: Var, i: usize, d: f64| {
            let len = self.nodes[v.0].value.len();
            grads[v.0].get_or_insert_with(|| vec![0.0; len])[i] += d;
        };
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let ia = |i: usize| if va.len() == 1 { 0 } else { i };
                let ib = |i: usize| if vb.len() == 1 { 0 } else { i };
                for (i, &gi) in g.iter().enumerate() {
                    let (x, y) = (va[ia(i)], vb[ib(i)]);
                    let (da, db) = match kind {
                        Binary::Add => (1.0, 1.0),
                        Binary::Sub => (1.0, -1.0),
                        Binary::Mul => (y, x),
                        Binary::Div => (1.0 / y, -x / (y * y)),
                        Binary::Min => {
                            if x <= y {
                                (1.0, 0.0)
                            } else {
                                (0.0, 1.0)
                            }
                        }
                        Binary::Max => {
                            if x >= y {
                                (1.0, 0.0)
                            } else {
                                (0.0, 1.0)
                            }
                        }
                    };
                    if da != 0.0 {
                        acc(*a, ia(i), gi * da);
                    }
                    if db != 0.0 {
                        acc(*b, ib(i), gi * db);
                    }
                }
            }
            Op::Unary(kind, a) => {
                let va = &self.nodes[a.0].value;
                for (i, &gi) in g.iter().enumerate() {
                    let x = va[i];
                    let y = node.value[i];
                    let d = match kind {
                        Unary::Exp => y,
                        Unary::Log => 1.0 / x,
                        Unary::Relu => {
                            if x > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Sigmoid => y * (1.0 - y),
                        Unary::GaussCdf => gauss_pdf(x),
                    };
                    acc(*a, i, gi * d);
                }
            }
            Op::Scale(a, k) => {
                for (i, &gi) in g.iter().enumerate() {
                    acc(*a, i, gi * k);
                }
            }
            Op::Offset(a) => {
                for (i, &gi) in g.iter().enumerate() {
                    acc(*a, i, gi);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let mut ga = vec![0.0; sa.len()];
                let mut gb = vec![0.0; sb.len()];
                for r in 0..sa.rows {
                    let grow = &g[r * sb.cols..(r + 1) * sb.cols];
                    for k in 0..sa.cols {
                        let brow = &vb[k * sb.cols..(k + 1) * sb.cols];
                        ga[r * sa.cols + k] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        let x = va[r * sa.cols + k];
                        if x != 0.0 {
                            for (o, gy) in gb[k * sb.cols..(k + 1) * sb.cols].iter_mut().zip(grow) {
                                *o += x * gy;
                            }
                        }
                    }
                }
                add_into(grads, *a, ga);
                add_into(grads, *b, gb);
            }
            Op::AddBias(a, bias) => {
                let cols = node.shape.cols;
                let mut gb = vec![0.0; cols];
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % cols] += gi;
                }
                add_into(grads, *a, g.to_vec());
                add_into(grads, *bias, gb);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                let ga = y.iter().zip(g).map(|(yi, gi)| yi * (gi - dot)).collect();
                add_into(grads, *a, ga);
            }
            Op::Sum(a) => {
                let len = self.nodes[a.0].value.len();
                add_into(grads, *a, vec![g[0]; len]);
            }
            Op::Broadcast(a) => {
                acc(*a, 0, g.iter().sum());
            }
            Op::Slice(a, offset) => {
                for (i, &gi) in g.iter().enumerate() {
                    acc(*a, offset + i, gi);
                }
            }
            Op::Transpose(a) => {
                let s = node.shape;
                let mut ga = vec![0.0; s.len()];
                for r in 0..s.rows {
                    for c in 0..s.cols {
                        ga[c * s.rows + r] = g[r * s.cols + c];
                    }
                }
                add_into(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape.rows;
                let mut col = 0;
                for p in parts {
                    let s = self.shape(*p);
                    let mut gp = vec![0.0; s.len()];
                    for r in 0..rows {
                        let src = &g[r * node.shape.cols + col..r * node.shape.cols + col + s.cols];
                        gp[r * s.cols..(r + 1) * s.cols].copy_from_slice(src);
                    }
                    add_into(grads, *p, gp);
                    col += s.cols;
                }
            }
            Op::External(inputs) => {
                for (v, d) in inputs {
                    add_into(grads, *v, d.iter().map(|x| x * g[0]).collect());
                }
            }
        }
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}
