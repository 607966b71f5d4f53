use proptest::prelude::*;
use stylealign::gradcheck::{self, GradCheck};
use stylealign::rng::SplitMix64;
use stylealign::{ops, Error, Graph, NodeId, Op, Tensor};

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut SplitMix64::new(seed))
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "got {got:?}, want {want:?}");
    }
}

fn assert_grad_ok(c: GradCheck) {
    assert!(c.max_error < TOL, "gradient check failed: {c:?}");
}

/// Weighted sum so each output coordinate receives a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, x: NodeId, seed: u64) -> stylealign::Result<NodeId> {
    let w = rand(g.value(x).shape(), seed);
    let wn = g.constant(w);
    let p = g.mul(x, wn)?;
    g.sum(p)
}

#[test]
fn matmul_examples() {
    let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let m = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
    assert_eq!(ops::matmul(&eye, &m).unwrap(), m);

    let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let ones = t(&[2, 1], &[1.0, 1.0]);
    assert_eq!(ops::matmul(&a, &ones).unwrap().data(), &[3.0, 7.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = SplitMix64::new(0);
    let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
    let c = ops::matmul(&a, &b).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += a.at(i, k) * b.at(k, j);
            }
            assert!((c.at(i, j) - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let err = ops::matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
    match &err {
        Error::Shape { lhs, rhs, .. } => {
            assert_eq!(lhs, &vec![2, 3]);
            assert_eq!(rhs, &vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn gelu_examples() {
    let y = ops::gelu(&Tensor::vector(vec![0.0, 1.0, -1.0]));
    assert_eq!(y.data()[0], 0.0);
    // Frozen from a 40-digit evaluation of the tanh form.
    assert!((y.data()[1] - 0.841_191_990_608_276_7).abs() < 1e-12);
    assert!((y.data()[2] + 0.158_808_009_391_723_3).abs() < 1e-12);
    // Within 1e-3 of the exact erf form, 0.8413447460685429.
    assert!((y.data()[1] - 0.841_344_746_068_542_9).abs() < 1e-3);
}

#[test]
fn sigmoid_examples() {
    let y = ops::sigmoid(&Tensor::vector(vec![0.0, 3f64.ln(), -745.0, 745.0]));
    assert_eq!(y.data()[0], 0.5);
    assert!((y.data()[1] - 0.75).abs() < 1e-15);
    assert!(y.data()[2] >= 0.0 && y.data()[2] <= 1e-300);
    assert_eq!(y.data()[3], 1.0);
    assert!(y.is_finite());
}

#[test]
fn log_softmax_examples() {
    let y = ops::log_softmax(&Tensor::vector(vec![0.0; 4]), 0).unwrap();
    assert_close(y.data(), &[-(4f64.ln()); 4], 1e-15);

    let y = ops::log_softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]), 0).unwrap();
    assert_close(
        y.data(),
        &[-2.407_605_964_444_38, -1.407_605_964_444_38, -0.407_605_964_444_38],
        1e-6,
    );

    let v = rand(&[2, 5], 3);
    let shifted = ops::shift(&v, 123.5);
    let a = ops::log_softmax(&v, 1).unwrap();
    let b = ops::log_softmax(&shifted, 1).unwrap();
    assert_close(a.data(), b.data(), 1e-12);

    assert!(ops::log_softmax(&v, 2).is_err());
}

#[test]
fn log_softmax_along_leading_axis() {
    let x = t(&[2, 2], &[0.0, 5.0, 0.0, 1.0]);
    let y = ops::log_softmax(&x, 0).unwrap();
    // column 0 is uniform over two entries
    assert!((y.at(0, 0) + 2f64.ln()).abs() < 1e-15);
    assert!((y.at(1, 0) + 2f64.ln()).abs() < 1e-15);
    let col1 = y.at(0, 1).exp() + y.at(1, 1).exp();
    assert!((col1 - 1.0).abs() < 1e-12);
}

#[test]
fn layer_norm_examples() {
    let one = Tensor::vector(vec![1.0; 3]);
    let zero = Tensor::zeros(&[3]);
    let y = ops::layer_norm(&Tensor::vector(vec![4.0; 3]), &one, &zero, 1e-5).unwrap();
    assert_eq!(y.data(), &[0.0; 3]);

    let y = ops::layer_norm(&t(&[3], &[1.0, 2.0, 3.0]), &one, &zero, 0.0).unwrap();
    assert_close(y.data(), &[-1.224_744_871, 0.0, 1.224_744_871], 1e-6);

    let b = Tensor::vector(vec![0.3, -2.0, 7.0]);
    let y = ops::layer_norm(&rand(&[4, 3], 1), &Tensor::zeros(&[3]), &b, 1e-5).unwrap();
    for r in 0..4 {
        assert_eq!(y.row(r), b.data());
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);

    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.sigmoid(x).unwrap();
    assert_eq!(g.backward(y).unwrap().get(x).unwrap().item(), 0.25);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn unreachable_parameters_get_exact_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let unused = g.param(rand(&[3, 2], 5));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    let gu = grads.get(unused).unwrap();
    assert_eq!(gu.shape(), &[3, 2]);
    assert!(gu.data().iter().all(|&v| v == 0.0));
}

#[test]
fn reused_parameter_accumulates_both_paths() {
    // f(w) = sum(w * a) + sum(w * b), with w used twice ...
    let a = rand(&[2, 3], 10);
    let b = rand(&[2, 3], 11);
    let w = rand(&[2, 3], 12);
    let mut g = Graph::new();
    let wn = g.param(w.clone());
    let (an, bn) = (g.constant(a.clone()), g.constant(b.clone()));
    let p1 = g.mul(wn, an).unwrap();
    let p2 = g.mul(wn, bn).unwrap();
    let s = g.add(p1, p2).unwrap();
    let loss = g.sum(s).unwrap();
    let shared = g.backward(loss).unwrap().get(wn).unwrap().clone();

    // ... equals the sum of gradients from two distinct leaves holding copies of w.
    let mut g = Graph::new();
    let w1 = g.param(w.clone());
    let w2 = g.param(w);
    let (an, bn) = (g.constant(a), g.constant(b));
    let p1 = g.mul(w1, an).unwrap();
    let p2 = g.mul(w2, bn).unwrap();
    let s = g.add(p1, p2).unwrap();
    let loss = g.sum(s).unwrap();
    let grads = g.backward(loss).unwrap();
    let expect = ops::add(grads.get(w1).unwrap(), grads.get(w2).unwrap()).unwrap();
    assert_eq!(shared.data(), expect.data());
}

#[test]
fn tape_is_topological_and_replays_bit_identically() {
    let mut g = Graph::new();
    let x = g.param(rand(&[3, 4], 1));
    let w = g.param(rand(&[4, 4], 2));
    let gain = g.param(rand(&[4], 3));
    let bias = g.param(rand(&[4], 4));
    let h = g.matmul(x, w).unwrap();
    let h = g.gelu(h).unwrap();
    let h = g.layer_norm(h, gain, bias, 1e-5).unwrap();
    let h = g.log_softmax(h, 1).unwrap();
    let _ = g.sum(h).unwrap();

    for id in g.ids() {
        for input in g.op(id).inputs() {
            assert!(input < id, "{:?} consumes later node {:?}", id, input);
        }
    }
    let replayed = g.replay().unwrap();
    for (id, v) in g.ids().zip(&replayed) {
        assert_eq!(g.value(id), v, "node {:?} ({})", id, g.op(id).kind());
        assert!(v.is_finite());
    }
    assert!(matches!(g.op(x), Op::Leaf { param: true }));
}

#[test]
fn primitive_gradients_match_finite_differences() {
    type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> stylealign::Result<NodeId>>;
    let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
        ("matmul", vec![rand(&[3, 4], 1), rand(&[4, 2], 2)], Box::new(|g, p| {
            let y = g.matmul(p[0], p[1])?;
            weighted_sum(g, y, 100)
        })),
        ("transpose", vec![rand(&[3, 2], 3)], Box::new(|g, p| {
            let y = g.transpose(p[0])?;
            weighted_sum(g, y, 101)
        })),
        ("add", vec![rand(&[2, 3], 4), rand(&[2, 3], 5)], Box::new(|g, p| {
            let y = g.add(p[0], p[1])?;
            weighted_sum(g, y, 102)
        })),
        ("sub", vec![rand(&[2, 3], 6), rand(&[2, 3], 7)], Box::new(|g, p| {
            let y = g.sub(p[0], p[1])?;
            weighted_sum(g, y, 103)
        })),
        ("mul", vec![rand(&[2, 3], 8), rand(&[2, 3], 9)], Box::new(|g, p| {
            let y = g.mul(p[0], p[1])?;
            weighted_sum(g, y, 104)
        })),
        ("add_bias", vec![rand(&[3, 4], 10), rand(&[4], 11)], Box::new(|g, p| {
            let y = g.add_bias(p[0], p[1])?;
            weighted_sum(g, y, 105)
        })),
        ("scale_shift", vec![rand(&[5], 12)], Box::new(|g, p| {
            let y = g.scale(p[0], -1.7)?;
            let y = g.shift(y, 0.3)?;
            weighted_sum(g, y, 106)
        })),
        ("gelu", vec![rand(&[2, 5], 13)], Box::new(|g, p| {
            let y = g.gelu(p[0])?;
            weighted_sum(g, y, 107)
        })),
        ("sigmoid", vec![rand(&[2, 5], 14)], Box::new(|g, p| {
            let y = g.sigmoid(p[0])?;
            weighted_sum(g, y, 108)
        })),
        ("softplus", vec![rand(&[2, 5], 15)], Box::new(|g, p| {
            let y = g.softplus(p[0])?;
            weighted_sum(g, y, 109)
        })),
        ("log_softmax_axis1", vec![rand(&[3, 5], 16)], Box::new(|g, p| {
            let y = g.log_softmax(p[0], 1)?;
            weighted_sum(g, y, 110)
        })),
        ("log_softmax_axis0", vec![rand(&[3, 5], 17)], Box::new(|g, p| {
            let y = g.log_softmax(p[0], 0)?;
            weighted_sum(g, y, 111)
        })),
        ("softmax", vec![rand(&[3, 4], 18)], Box::new(|g, p| {
            let y = g.softmax(p[0])?;
            weighted_sum(g, y, 112)
        })),
        ("layer_norm", vec![rand(&[3, 6], 19), rand(&[6], 20), rand(&[6], 21)], Box::new(|g, p| {
            let y = g.layer_norm(p[0], p[1], p[2], 1e-5)?;
            weighted_sum(g, y, 113)
        })),
        ("causal_mask_softmax", vec![rand(&[4, 4], 22)], Box::new(|g, p| {
            let y = g.causal_mask(p[0])?;
            let y = g.softmax(y)?;
            weighted_sum(g, y, 114)
        })),
        ("gather_rows", vec![rand(&[5, 3], 23)], Box::new(|g, p| {
            let y = g.gather_rows(p[0], vec![4, 0, 4, 2])?;
            weighted_sum(g, y, 115)
        })),
        ("concat_rows", vec![rand(&[1, 3], 24), rand(&[2, 3], 25)], Box::new(|g, p| {
            let y = g.concat_rows(vec![p[0], p[1], p[0]])?;
            weighted_sum(g, y, 116)
        })),
        ("pick", vec![rand(&[3, 4], 26)], Box::new(|g, p| {
            let y = g.pick(p[0], vec![1, 5, 11, 5])?;
            weighted_sum(g, y, 117)
        })),
        ("mean", vec![rand(&[3, 4], 27)], Box::new(|g, p| {
            let y = g.mul(p[0], p[0])?;
            g.mean(y)
        })),
    ];
    for (name, inputs, build) in cases {
        let c = gradcheck::check(&inputs, H, build).unwrap();
        assert!(c.max_error < TOL, "{name}: {c:?}");
    }
}

#[test]
fn composite_graph_matches_finite_differences() {
    let inputs = vec![
        rand(&[3, 5], 30),
        rand(&[5, 4], 31),
        rand(&[4], 32),
        rand(&[4], 33),
    ];
    let c = gradcheck::check(&inputs, H, |g, p| {
        let h = g.matmul(p[0], p[1])?;
        let h = g.gelu(h)?;
        let h = g.layer_norm(h, p[2], p[3], 1e-5)?;
        let h = g.log_softmax(h, 1)?;
        g.pick(h, vec![0, 5, 10]).and_then(|y| g.sum(y))
    })
    .unwrap();
    assert_grad_ok(c);
}

#[test]
fn primitive_values_stay_finite_on_extreme_inputs() {
    let x = Tensor::vector(vec![-800.0, -30.0, 0.0, 30.0, 800.0]);
    assert!(ops::sigmoid(&x).is_finite());
    assert!(ops::softplus(&x).is_finite());
    assert!(ops::log_softmax(&x, 0).unwrap().is_finite());
    assert!(ops::softmax(&x).is_finite());
    assert!(ops::gelu(&x).is_finite());
}

proptest! {
    #[test]
    fn exp_log_softmax_sums_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let y = ops::log_softmax(&Tensor::vector(v), 0).unwrap();
        let s: f64 = y.data().iter().map(|l| l.exp()).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_shift_invariant(v in prop::collection::vec(-20.0f64..20.0, 1..12), c in -100.0f64..100.0) {
        let x = Tensor::vector(v);
        let a = ops::log_softmax(&x, 0).unwrap();
        let b = ops::log_softmax(&ops::shift(&x, c), 0).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn random_elementwise_chains_pass_gradcheck(seed in 0u64..1000) {
        let inputs = vec![rand(&[2, 4], seed), rand(&[4], seed + 1)];
        let c = gradcheck::check(&inputs, H, |g, p| {
            let h = g.add_bias(p[0], p[1])?;
            let h = g.gelu(h)?;
            let h = g.softplus(h)?;
            let h = g.sigmoid(h)?;
            weighted_sum(g, h, seed + 2)
        }).unwrap();
        prop_assert!(c.max_error < TOL, "{:?}", c);
    }
}
