//! The two players: a permutation-equivariant allocation network and an
//! adversary that turns Gaussian noise into a complete AdWords instance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adwords::{AdWordsInstance, EnvError, Policy, SlotView, TapedSlot};
use crate::autodiff::{
    mlp_apply, order_free_sum, Activation, AutodiffError, Mlp, ParamLayout, ParamVector, Shape, Tape, Var,
};

pub const FEATURE_WIDTH: usize = 6;

/// Per-advertiser features `(v, r/B, B, Σv, Σr/B, ΣB)` for one slot.
pub fn build_features(bids: &[f64], remaining: &[f64], budgets: &[f64]) -> Vec<[f64; FEATURE_WIDTH]> {
    assert!(bids.len() == remaining.len() && bids.len() == budgets.len(), "feature length mismatch");
    let frac: Vec<f64> = remaining.iter().zip(budgets).map(|(r, b)| r / b).collect();
    let (sv, sf, sb) = (order_free_sum(bids), order_free_sum(&frac), order_free_sum(budgets));
    (0..bids.len())
        .map(|i| [bids[i], frac[i], budgets[i], sv, sf, sb])
        .collect()
}

/// Taped [`build_features`]: returns an `n × 6` node.
pub fn build_features_taped(tape: &mut Tape, slot: &TapedSlot) -> Var {
    let n = tape.shape(slot.bids).rows;
    let frac = tape.div(slot.remaining, slot.budgets);
    let mut cols = vec![slot.bids, frac, slot.budgets];
    for v in [slot.bids, frac, slot.budgets] {
        let s = tape.sum(v);
        cols.push(tape.broadcast(s, Shape::new(n, 1)));
    }
    tape.concat_cols(&cols)
}

/// Shared single-advertiser scorer followed by a softmax across advertisers.
/// The parameter count does not depend on `n` or `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgNet {
    pub arch: Mlp,
    pub params: ParamVector,
}

impl AlgNet {
    pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Self {
        let mut widths = vec![FEATURE_WIDTH];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let arch = Mlp::new("alg", &widths, Activation::Relu, Activation::Identity);
        let mut layout = ParamLayout::new();
        arch.register(&mut layout);
        let mut params = layout.zeros();
        params.init_glorot(rng);
        AlgNet { arch, params }
    }

    /// Scores `features` (`n × 6`) and softmaxes them into an `n × 1` allocation.
    pub fn forward_taped(&self, tape: &mut Tape, weights: Var, features: Var) -> Result<Var, AutodiffError> {
        let scores = mlp_apply(tape, &self.arch, &self.params, weights, features)?;
        Ok(tape.softmax(scores))
    }

    pub fn alg_forward(&self, features: &[[f64; FEATURE_WIDTH]]) -> Result<Vec<f64>, AutodiffError> {
        let mut tape = Tape::new();
        let weights = tape.column(self.params.values().to_vec());
        let x = tape.leaf(Shape::new(features.len(), FEATURE_WIDTH), features.concat());
        let out = self.forward_taped(&mut tape, weights, x)?;
        tape.check_finite()?;
        Ok(tape.value(out).to_vec())
    }
}

impl Policy for AlgNet {
    fn name(&self) -> String {
        "learned".into()
    }

    fn allocate(&self, slot: &SlotView<'_>) -> Result<Vec<f64>, EnvError> {
        let features = build_features(slot.bids, slot.remaining, slot.budgets);
        Ok(self.alg_forward(&features)?)
    }

    fn params(&self) -> Option<&ParamVector> {
        Some(&self.params)
    }

    fn allocate_taped(
        &self,
        tape: &mut Tape,
        slot: &TapedSlot,
        _view: &SlotView<'_>,
        weights: Option<Var>,
    ) -> Result<Var, EnvError> {
        let weights = match weights {
            Some(w) => w,
            None => tape.column(self.params.values().to_vec()),
        };
        let features = build_features_taped(tape, slot);
        Ok(self.forward_taped(tape, weights, features)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvNetConfig {
    pub m: usize,
    pub n: usize,
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub with_budgets: bool,
}

impl Default for AdvNetConfig {
    fn default() -> Self {
        AdvNetConfig {
            m: 25,
            n: 5,
            noise_dim: 100,
            hidden: vec![256, 256],
            with_budgets: false,
        }
    }
}

/// Generator MLP: noise → ReLU body → sigmoid bid head (and optional budget head).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvNet {
    pub config: AdvNetConfig,
    body: Mlp,
    bid_head: Mlp,
    budget_head: Option<Mlp>,
    pub params: ParamVector,
}

impl AdvNet {
    pub fn new<R: Rng + ?Sized>(config: AdvNetConfig, rng: &mut R) -> Self {
        let mut widths = vec![config.noise_dim];
        widths.extend_from_slice(&config.hidden);
        let body = Mlp::new("adv.body", &widths, Activation::Relu, Activation::Relu);
        let top = *widths.last().expect("non-empty");
        let bid_head = Mlp::new("adv.bids", &[top, config.m * config.n], Activation::Relu, Activation::Sigmoid);
        let budget_head = config
            .with_budgets
            .then(|| Mlp::new("adv.budgets", &[top, config.n], Activation::Relu, Activation::Sigmoid));
        let mut layout = ParamLayout::new();
        body.register(&mut layout);
        bid_head.register(&mut layout);
        if let Some(h) = &budget_head {
            h.register(&mut layout);
        }
        let mut net = AdvNet {
            config,
            body,
            bid_head,
            budget_head,
            params: layout.zeros(),
        };
        net.reinit(rng);
        net
    }

    /// Fresh random weights; the network goes back to producing random-looking instances.
    pub fn reinit<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.params.init_glorot(rng);
    }

    /// Zeroes the output layers, so every bid is 0.5 and budgets sit mid-range.
    pub fn zero_heads(&mut self) {
        let names: Vec<String> = std::iter::once(&self.bid_head)
            .chain(self.budget_head.as_ref())
            .flat_map(|h| [h.weight_name(0), h.bias_name(0)])
            .collect();
        for name in names {
            if let Ok(v) = self.params.segment_values_mut(&name) {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.config.noise_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Records generation on `tape`; returns bids (`m × n`) and budgets (`n × 1`).
    pub fn generate_taped(&self, tape: &mut Tape, weights: Var, noise: &[f64]) -> Result<(Var, Var), AutodiffError> {
        Ok(self.generate_batch_taped(tape, weights, &[noise.to_vec()])?[0])
    }

    /// One forward pass for a whole batch of noise vectors.
    pub fn generate_batch_taped(
        &self,
        tape: &mut Tape,
        weights: Var,
        noises: &[Vec<f64>],
    ) -> Result<Vec<(Var, Var)>, AutodiffError> {
        let (m, n, d) = (self.config.m, self.config.n, self.config.noise_dim);
        if let Some(z) = noises.iter().find(|z| z.len() != d) {
            return Err(AutodiffError::ShapeMismatch {
                expected: d,
                got: z.len(),
            });
        }
        let z = tape.leaf(Shape::new(noises.len(), d), noises.concat());
        let h = mlp_apply(tape, &self.body, &self.params, weights, z)?;
        let flat = mlp_apply(tape, &self.bid_head, &self.params, weights, h)?;
        let budget_flat = match &self.budget_head {
            Some(head) => {
                let s = mlp_apply(tape, head, &self.params, weights, h)?;
                let s = tape.scale(s, (m - 1) as f64);
                Some(tape.offset(s, 1.0))
            }
            None => None,
        };
        let mut out = Vec::with_capacity(noises.len());
        for k in 0..noises.len() {
            let bids = tape.slice(flat, k * m * n, Shape::new(m, n));
            let budgets = match budget_flat {
                Some(b) => tape.slice(b, k * n, Shape::new(n, 1)),
                None => tape.column(vec![m as f64 / n as f64; n]),
            };
            out.push((bids, budgets));
        }
        Ok(out)
    }

    pub fn adv_generate(&self, noise: &[f64]) -> Result<AdWordsInstance, EnvError> {
        let mut tape = Tape::new();
        let weights = tape.column(self.params.values().to_vec());
        let (bids, budgets) = self.generate_taped(&mut tape, weights, noise)?;
        tape.check_finite()?;
        AdWordsInstance::new(
            self.config.m,
            self.config.n,
            tape.value(bids).to_vec(),
            tape.value(budgets).to_vec(),
        )
    }
}
