use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite differences of `f` at `x`.
fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn params(values: Vec<f64>) -> ParamVector {
    let mut layout = ParamLayout::new();
    layout.push("x", values.len(), 1);
    let mut p = layout.zeros();
    p.values_mut().copy_from_slice(&values);
    p
}

type Program = fn(&mut Tape, Var) -> Var;

fn value_of(program: Program, x: &[f64]) -> f64 {
    let (v, _) = evaluate_and_grad::<_, AutodiffError>(&params(x.to_vec()), |t, p| Ok(program(t, p))).unwrap();
    v
}

#[test]
fn square_value_and_gradient() {
    let (v, g) = evaluate_and_grad::<_, AutodiffError>(&params(vec![3.0]), |t, x| Ok(t.mul(x, x))).unwrap();
    assert_eq!(v, 9.0);
    assert_eq!(g, vec![6.0]);
}

#[test]
fn relu_kink_uses_zero_branch() {
    let (v, g) = evaluate_and_grad::<_, AutodiffError>(&params(vec![0.0]), |t, x| Ok(t.relu(x))).unwrap();
    assert_eq!(v, 0.0);
    assert_eq!(g, vec![0.0]);
}

#[test]
fn min_max_ties_follow_first_argument() {
    let p = params(vec![2.0, 2.0]);
    let (_, g) = evaluate_and_grad::<_, AutodiffError>(&p, |t, x| {
        let a = t.slice(x, 0, Shape::new(1, 1));
        let b = t.slice(x, 1, Shape::new(1, 1));
        Ok(t.min(a, b))
    })
    .unwrap();
    assert_eq!(g, vec![1.0, 0.0]);
    let (_, g) = evaluate_and_grad::<_, AutodiffError>(&p, |t, x| {
        let a = t.slice(x, 0, Shape::new(1, 1));
        let b = t.slice(x, 1, Shape::new(1, 1));
        Ok(t.max(b, a))
    })
    .unwrap();
    assert_eq!(g, vec![0.0, 1.0]);
}

fn softmax_xent(t: &mut Tape, x: Var) -> Var {
    let p = t.softmax(x);
    let first = t.slice(p, 0, Shape::new(1, 1));
    let l = t.log(first);
    t.scale(l, -1.0)
}

#[test]
fn softmax_cross_entropy_gradient_on_equal_logits() {
    let x = vec![0.7, 0.7, 0.7];
    let (_, g) = evaluate_and_grad::<_, AutodiffError>(&params(x.clone()), |t, v| Ok(softmax_xent(t, v))).unwrap();
    let expected = [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
    for (a, b) in g.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    let fd = finite_diff(&|p| value_of(softmax_xent, p), &x, 1e-6);
    for (a, b) in g.iter().zip(&fd) {
        assert!(rel_err(*a, *b) <= 1e-5, "{a} vs {b}");
    }
}

#[test]
fn every_primitive_matches_finite_differences() {
    let programs: Vec<(&str, Program)> = vec![
        ("add", |t, x| {
            let a = t.slice(x, 0, Shape::new(2, 1));
            let b = t.slice(x, 2, Shape::new(2, 1));
            let s = t.add(a, b);
            let s = t.mul(s, s);
            t.sum(s)
        }),
        ("sub_div", |t, x| {
            let a = t.slice(x, 0, Shape::new(2, 1));
            let b = t.slice(x, 2, Shape::new(2, 1));
            let b = t.offset(b, 3.0);
            let d = t.sub(a, b);
            let q = t.div(d, b);
            t.sum(q)
        }),
        ("min_max", |t, x| {
            let a = t.slice(x, 0, Shape::new(2, 1));
            let b = t.slice(x, 2, Shape::new(2, 1));
            let lo = t.min(a, b);
            let hi = t.max(a, b);
            let p = t.mul(lo, hi);
            t.sum(p)
        }),
        ("exp_log", |t, x| {
            let e = t.exp(x);
            let e = t.offset(e, 1.0);
            let l = t.log(e);
            t.sum(l)
        }),
        ("relu", |t, x| {
            let r = t.relu(x);
            let r2 = t.mul(r, x);
            t.sum(r2)
        }),
        ("sigmoid", |t, x| {
            let s = t.sigmoid(x);
            let s = t.mul(s, x);
            t.sum(s)
        }),
        ("gauss_cdf", |t, x| {
            let c = t.gauss_cdf(x);
            let c = t.mul(c, c);
            t.sum(c)
        }),
        ("softmax", |t, x| {
            let s = t.softmax(x);
            let w = t.mul(s, x);
            t.sum(w)
        }),
        ("affine", |t, x| {
            let a = t.slice(x, 0, Shape::new(1, 2));
            let w = t.slice(x, 0, Shape::new(2, 2));
            let b = t.slice(x, 2, Shape::new(1, 2));
            let y = t.matmul(a, w);
            let y = t.add_bias(y, b);
            let y = t.mul(y, y);
            t.sum(y)
        }),
        ("concat_transpose_broadcast", |t, x| {
            let a = t.slice(x, 0, Shape::new(2, 1));
            let b = t.slice(x, 2, Shape::new(2, 1));
            let c = t.concat_cols(&[a, b]);
            let ct = t.transpose(c);
            let prod = t.matmul(c, ct);
            let s = t.sum(a);
            let s = t.broadcast(s, Shape::new(2, 2));
            let y = t.mul(prod, s);
            t.sum(y)
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, program) in programs {
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        while checked < 100 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            // stay away from kinks of min/max/relu
            let near_kink = x.iter().any(|v: &f64| v.abs() < 1e-3)
                || (x[0] - x[2]).abs() < 1e-3
                || (x[1] - x[3]).abs() < 1e-3;
            if near_kink {
                continue;
            }
            let (_, g) = evaluate_and_grad::<_, AutodiffError>(&params(x.clone()), |t, v| Ok(program(t, v))).unwrap();
            let fd = finite_diff(&|p| value_of(program, p), &x, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                worst = worst.max(rel_err(*a, *b));
            }
            checked += 1;
        }
        assert!(worst <= 1e-5, "{name}: worst relative error {worst}");
    }
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let x = vec![0.3, -1.2, 0.8, 2.0];
    let p = params(x);
    let f = |t: &mut Tape, v: Var| {
        let e = t.exp(v);
        t.sum(e)
    };
    let g = |t: &mut Tape, v: Var| {
        let s = t.sigmoid(v);
        let s = t.mul(s, v);
        t.sum(s)
    };
    let (_, gf) = evaluate_and_grad::<_, AutodiffError>(&p, |t, v| Ok(f(t, v))).unwrap();
    let (_, gg) = evaluate_and_grad::<_, AutodiffError>(&p, |t, v| Ok(g(t, v))).unwrap();
    let (_, gs) = evaluate_and_grad::<_, AutodiffError>(&p, |t, v| {
        let a = f(t, v);
        let b = g(t, v);
        Ok(t.add(a, b))
    })
    .unwrap();
    for i in 0..4 {
        assert!((gs[i] - (gf[i] + gg[i])).abs() <= 1e-12);
    }
}

#[test]
fn replay_is_bitwise_deterministic() {
    let p = params(vec![0.1, 0.2, -0.3, 0.4]);
    let run = || {
        evaluate_and_grad::<_, AutodiffError>(&p, |t, v| {
            let s = t.softmax(v);
            let c = t.gauss_cdf(s);
            Ok(t.sum(c))
        })
        .unwrap()
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn non_finite_forward_names_the_node() {
    let err = evaluate_and_grad::<_, AutodiffError>(&params(vec![-1.0]), |t, v| Ok(t.log(v))).unwrap_err();
    assert_eq!(err, AutodiffError::NonFinite { node: 1, op: "log" });
}

#[test]
fn empty_params_rejected() {
    let err = evaluate_and_grad::<_, AutodiffError>(&ParamLayout::new().zeros(), |t, v| Ok(t.sum(v))).unwrap_err();
    assert_eq!(err, AutodiffError::EmptyParams);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = vec![1.0];
    let mut s = AdamState::new(1, AdamConfig::default());
    adam_step(&mut p, &[0.37], &mut s, false).unwrap();
    assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
    let mut q = vec![1.0];
    let mut s = AdamState::new(1, AdamConfig::default());
    adam_step(&mut q, &[-5.0], &mut s, true).unwrap();
    assert!((q[0] - (1.0 - 1e-3)).abs() < 1e-9);
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut p = vec![1.0, -2.0];
    let mut s = AdamState::new(2, AdamConfig::default());
    adam_step(&mut p, &[0.0, 0.0], &mut s, false).unwrap();
    assert_eq!(p, vec![1.0, -2.0]);
    assert_eq!(s.t, 1);
}

#[test]
fn adam_matches_scalar_reference() {
    // independent scalar Adam written out longhand
    let (lr, b1, b2, eps) = (0.001_f64, 0.9_f64, 0.999_f64, 1e-8_f64);
    let (mut x, mut m, mut v) = (0.0_f64, 0.0_f64, 0.0_f64);
    for t in 1..=2 {
        let g = 1.0;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
    }
    let mut p = vec![0.0];
    let mut s = AdamState::new(1, AdamConfig::default());
    for _ in 0..2 {
        adam_step(&mut p, &[1.0], &mut s, false).unwrap();
    }
    assert!((p[0] - x).abs() < 1e-15);
    assert!((p[0] + 0.002).abs() < 1e-8);
}

#[test]
fn adam_rejects_length_mismatch() {
    let mut p = vec![0.0; 3];
    let mut s = AdamState::new(3, AdamConfig::default());
    assert!(adam_step(&mut p, &[1.0], &mut s, false).is_err());
}

#[test]
fn identity_layer_is_identity() {
    let mlp = Mlp::new("id", &[3, 3], Activation::Relu, Activation::Identity);
    let mut layout = ParamLayout::new();
    mlp.register(&mut layout);
    let mut p = layout.zeros();
    let w = p.segment_values_mut("id.0.w").unwrap();
    for i in 0..3 {
        w[i * 3 + i] = 1.0;
    }
    let out = mlp_apply_values(&p, &mlp, &[0.5, -2.0, 7.0]).unwrap();
    assert_eq!(out, vec![0.5, -2.0, 7.0]);
}

#[test]
fn softmax_of_equal_scores_is_uniform() {
    for n in 1..8 {
        let s = softmax(&vec![0.42; n]);
        assert!(s.iter().all(|p| (p - 1.0 / n as f64).abs() < 1e-15));
    }
}

#[test]
fn mlp_matches_direct_matrix_arithmetic() {
    let mlp = Mlp::new("net", &[6, 4, 1], Activation::Relu, Activation::Identity);
    let mut layout = ParamLayout::new();
    mlp.register(&mut layout);
    let mut p = layout.zeros();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    p.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let x = [0.3, -0.7, 1.1, 0.05, -0.4, 0.9];

    let w0 = p.segment_values("net.0.w").unwrap();
    let b0 = p.segment_values("net.0.b").unwrap();
    let w1 = p.segment_values("net.1.w").unwrap();
    let b1 = p.segment_values("net.1.b").unwrap();
    let mut hidden = [0.0; 4];
    for (j, h) in hidden.iter_mut().enumerate() {
        let z: f64 = (0..6).map(|k| x[k] * w0[k * 4 + j]).sum::<f64>() + b0[j];
        *h = z.max(0.0);
    }
    let expected: f64 = (0..4).map(|k| hidden[k] * w1[k]).sum::<f64>() + b1[0];

    let out = mlp_apply_values(&p, &mlp, &x).unwrap();
    assert!((out[0] - expected).abs() < 1e-12);
}

#[test]
fn mlp_rejects_wrong_input_width() {
    let mlp = Mlp::new("net", &[6, 4, 1], Activation::Relu, Activation::Identity);
    let mut layout = ParamLayout::new();
    mlp.register(&mut layout);
    let p = layout.zeros();
    assert!(matches!(
        mlp_apply_values(&p, &mlp, &[1.0; 5]),
        Err(AutodiffError::ShapeMismatch { expected: 6, got: 5 })
    ));
}

#[test]
fn checkpoint_json_layout() {
    let mut layout = ParamLayout::new();
    layout.push("a.w", 2, 1);
    layout.push("a.b", 1, 1);
    let p = layout.zeros();
    let json = serde_json::to_value(&p).unwrap();
    assert_eq!(json["segments"][1]["name"], "a.b");
    assert_eq!(json["segments"][1]["offset"], 2);
    assert_eq!(json["segments"][0]["shape"], serde_json::json!([2, 1]));
    assert_eq!(json["values"].as_array().unwrap().len(), 3);
    let back: ParamVector = serde_json::from_value(json).unwrap();
    assert_eq!(back, p);
}
