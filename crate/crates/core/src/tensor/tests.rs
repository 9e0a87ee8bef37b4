use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::relative_error;
use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `y` with fixed random weights so no gradient is trivially zero.
fn weighted(g: &mut Graph<f64>, y: NodeId, seed: u64) -> crate::Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

#[test]
fn matmul_with_identity_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = rand_tensor(&mut rng, &[3, 3]);
    let mut g = Graph::new();
    let i = g.constant(Tensor::eye(3));
    let x = g.constant(m.clone());
    let y = g.matmul(i, x).unwrap();
    assert_eq!(g.forward(y).unwrap(), m);
}

#[test]
fn uniform_logits_give_uniform_softmax() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 4]));
    let y = g.softmax(x, 1, None).unwrap();
    assert_eq!(g.value(y).data(), &[0.25; 4]);
}

#[test]
fn two_layer_mlp_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[1, 4]);
    let w1 = rand_tensor(&mut rng, &[4, 5]);
    let b1 = rand_tensor(&mut rng, &[1, 5]);
    let w2 = rand_tensor(&mut rng, &[5, 3]);
    let b2 = rand_tensor(&mut rng, &[1, 3]);

    let mut g = Graph::new();
    let ids: Vec<_> = [&x, &w1, &b1, &w2, &b2].iter().map(|t| g.constant((*t).clone())).collect();
    let h = g.affine(ids[0], ids[1], ids[2]).unwrap();
    let h = g.elu(h).unwrap();
    let y = g.affine(h, ids[3], ids[4]).unwrap();

    let mut hidden = [0.0; 5];
    for j in 0..5 {
        let mut s = b1.data()[j];
        for i in 0..4 {
            s += x.data()[i] * w1.at(i, j);
        }
        hidden[j] = if s > 0.0 { s } else { s.exp() - 1.0 };
    }
    for k in 0..3 {
        let mut s = b2.data()[k];
        for j in 0..5 {
            s += hidden[j] * w2.at(j, k);
        }
        assert!((g.value(y).data()[k] - s).abs() <= 1e-12);
    }
}

#[test]
fn sum_backward_is_all_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let x = g.param(rand_tensor(&mut rng, &[2, 3, 4]));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn sigmoid_at_zero_has_quarter_slope() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.sigmoid(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.25]);
}

#[test]
fn gated_composite_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        rand_tensor(&mut rng, &[1, 5]), // x
        rand_tensor(&mut rng, &[5, 4]), // W
        rand_tensor(&mut rng, &[1, 4]), // b
        rand_tensor(&mut rng, &[1, 7]), // p
        rand_tensor(&mut rng, &[7, 4]), // V
        rand_tensor(&mut rng, &[1, 4]), // c
    ];
    let report = grad_check(
        |g: &mut Graph<f64>, v: &[NodeId]| {
            let a = g.affine(v[0], v[1], v[2])?;
            let a = g.tanh(a)?;
            let b = g.affine(v[3], v[4], v[5])?;
            let b = g.sigmoid(b)?;
            let y = g.mul(a, b)?;
            g.sum(y)
        },
        &inputs,
        1e-5,
        1e-6,
    );
    assert!(report.passed, "{report:?}");
}

#[test]
fn linear_function_checks_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![rand_tensor(&mut rng, &[3, 4])];
    let report = grad_check(|g: &mut Graph<f64>, v: &[NodeId]| weighted(g, v[0], 9), &inputs, 1e-5, 1e-9);
    assert!(report.max_rel_error < 1e-9, "{report:?}");
}

#[test]
fn masked_logit_gets_exactly_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::row(vec![0.3, -1.2, 2.0, 0.5]));
    let mask = [true, false, true, true];
    let y = g.softmax(x, 1, Some(&mask)).unwrap();
    assert_eq!(g.value(y).data()[1], 0.0);
    let l = weighted(&mut g, y, 4).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().data()[1], 0.0);
}

#[test]
fn fully_masked_lane_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let mask = [false, false, false, true, false, true];
    let y = g.softmax(x, 1, Some(&mask)).unwrap();
    let v = g.value(y).data().to_vec();
    assert_eq!(&v[..3], &[0.0; 3]);
    assert!((v[3] + v[5] - 1.0).abs() < 1e-12);
}

#[test]
fn shape_errors_name_the_primitive() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn non_finite_outputs_are_rejected() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::scalar(f64::MAX));
    let err = g.scale(a, 10.0).unwrap_err();
    assert!(matches!(err, Error::NonFinite { op: "scale" }));
}

#[test]
fn backward_rejects_non_scalar_and_detached_roots() {
    let mut g = Graph::<f64>::new();
    let p = g.param(Tensor::zeros(&[2, 2]));
    let t = g.tanh(p).unwrap();
    assert!(matches!(g.backward(t), Err(Error::NonScalarRoot(_))));
    let c = g.constant(Tensor::zeros(&[2]));
    let s = g.sum(c).unwrap();
    assert!(matches!(g.backward(s), Err(Error::DetachedRoot)));

    let mut other = Graph::<f64>::new();
    let foreign = other.constant(Tensor::scalar(1.0));
    assert!(matches!(g.backward(foreign), Err(Error::UnknownNode(_))));
}

#[test]
fn fan_out_accumulates() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    let grads = g.backward(z).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[7.0]);
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let a = g.param(rand_tensor(&mut rng, &[4, 6]));
        let b = g.param(rand_tensor(&mut rng, &[6, 3]));
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax(c, 0, None).unwrap();
        let e = g.elu(s).unwrap();
        g.value(e).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn single_precision_graph_runs() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::row(vec![0.5f32, -0.25, 1.0]));
    let y = g.softmax(x, 1, None).unwrap();
    let s: f32 = g.value(y).data().iter().sum();
    assert!((s - 1.0).abs() < 1e-6);
    let l = g.cross_entropy(x, 2).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(x).unwrap().numel(), 3);
}

#[test]
fn cross_entropy_of_uniform_is_log_classes() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::row(vec![0.0; 4]));
    let l = g.cross_entropy(x, 3).unwrap();
    assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);
    assert!(matches!(g.cross_entropy(x, 4), Err(Error::TargetOutOfRange { target: 4, classes: 4 })));
}

#[test]
fn embedding_rejects_unknown_ids() {
    let mut g = Graph::<f64>::new();
    let t = g.param(Tensor::zeros(&[5, 2]));
    assert!(matches!(g.embedding(t, &[1, 7]), Err(Error::UnknownToken(7))));
}

#[derive(Clone, Copy, Debug)]
enum Prim {
    MatMul,
    BatchMatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Affine,
    Concat,
    Narrow,
    Reshape,
    Transpose,
    Broadcast,
    Tanh,
    Sigmoid,
    Elu,
    Softmax,
    Mean,
    Embedding,
    CrossEntropy,
}

const PRIMS: [Prim; 19] = [
    Prim::MatMul,
    Prim::BatchMatMul,
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::Scale,
    Prim::Affine,
    Prim::Concat,
    Prim::Narrow,
    Prim::Reshape,
    Prim::Transpose,
    Prim::Broadcast,
    Prim::Tanh,
    Prim::Sigmoid,
    Prim::Elu,
    Prim::Softmax,
    Prim::Mean,
    Prim::Embedding,
    Prim::CrossEntropy,
];

fn check_primitive(prim: Prim, a: usize, b: usize, c: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = |rng: &mut ChaCha8Rng, s: &[usize]| rand_tensor(rng, s);
    let mask: Vec<bool> = (0..a * b).map(|i| i % 3 != 1).collect();
    let (inputs, build): (Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> crate::Result<NodeId>>) = match prim {
        Prim::MatMul => (vec![r(&mut rng, &[a, b]), r(&mut rng, &[b, c])], Box::new(|g, v| g.matmul(v[0], v[1]))),
        Prim::BatchMatMul => (vec![r(&mut rng, &[c, a, b]), r(&mut rng, &[c, b, a])], Box::new(|g, v| g.batch_matmul(v[0], v[1]))),
        Prim::Add => (vec![r(&mut rng, &[a, b]), r(&mut rng, &[a, b])], Box::new(|g, v| g.add(v[0], v[1]))),
        Prim::Sub => (vec![r(&mut rng, &[a, b]), r(&mut rng, &[a, b])], Box::new(|g, v| g.sub(v[0], v[1]))),
        Prim::Mul => (vec![r(&mut rng, &[a, b]), r(&mut rng, &[a, b])], Box::new(|g, v| g.mul(v[0], v[1]))),
        Prim::Scale => (vec![r(&mut rng, &[a, b])], Box::new(|g, v| g.scale(v[0], -1.7))),
        Prim::Affine => (
            vec![r(&mut rng, &[a, b]), r(&mut rng, &[b, c]), r(&mut rng, &[1, c])],
            Box::new(|g, v| g.affine(v[0], v[1], v[2])),
        ),
        Prim::Concat => (
            vec![r(&mut rng, &[a, b, 2]), r(&mut rng, &[a, c, 2])],
            Box::new(|g, v| g.concat(&[v[0], v[1], v[0]], 1)),
        ),
        Prim::Narrow => (vec![r(&mut rng, &[a, b + 1, c])], Box::new(move |g, v| g.narrow(v[0], 1, 1, b))),
        Prim::Reshape => (vec![r(&mut rng, &[a, b, c])], Box::new(move |g, v| g.reshape(v[0], &[a * b, c]))),
        Prim::Transpose => (vec![r(&mut rng, &[a, b])], Box::new(|g, v| g.transpose(v[0]))),
        Prim::Broadcast => (vec![r(&mut rng, &[1, b])], Box::new(move |g, v| g.broadcast_rows(v[0], a))),
        Prim::Tanh => (vec![r(&mut rng, &[a, b])], Box::new(|g, v| g.tanh(v[0]))),
        Prim::Sigmoid => (vec![r(&mut rng, &[a, b])], Box::new(|g, v| g.sigmoid(v[0]))),
        Prim::Elu => (vec![r(&mut rng, &[a, b])], Box::new(|g, v| g.elu(v[0]))),
        Prim::Softmax => (vec![r(&mut rng, &[a, b])], Box::new(move |g, v| g.softmax(v[0], 1, Some(&mask)))),
        Prim::Mean => (vec![r(&mut rng, &[a, b])], Box::new(|g, v| g.mean(v[0]))),
        Prim::Embedding => {
            let ids: Vec<usize> = (0..c).map(|i| (i * 7) % a).collect();
            (vec![r(&mut rng, &[a, b])], Box::new(move |g, v| g.embedding(v[0], &ids)))
        }
        Prim::CrossEntropy => (vec![r(&mut rng, &[1, b])], Box::new(move |g, v| g.cross_entropy(v[0], c % b))),
    };
    let report = grad_check(
        |g: &mut Graph<f64>, v: &[NodeId]| {
            let y = build(g, v)?;
            weighted(g, y, seed ^ 0xabc)
        },
        &inputs,
        1e-5,
        1e-6,
    );
    assert!(report.error.is_none(), "{prim:?}: {:?}", report.error);
    report.max_rel_error
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_primitive_matches_finite_differences(p in 0usize..PRIMS.len(), a in 1usize..=8, b in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        let err = check_primitive(PRIMS[p], a, b, c, seed);
        prop_assert!(err < 1e-6, "{:?} relative error {}", PRIMS[p], err);
    }

    #[test]
    fn softmax_normalizes_and_ignores_shifts(rows in 1usize..=8, cols in 1usize..=8, axis in 0usize..2, shift in -50.0f64..50.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[rows, cols]).data().iter().map(|v| v * 10.0).collect::<Vec<_>>();
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(vec![rows, cols], x).unwrap());
        let b = g.constant(Tensor::new(vec![rows, cols], shifted).unwrap());
        let sa = g.softmax(a, axis, None).unwrap();
        let sb = g.softmax(b, axis, None).unwrap();
        let (va, vb) = (g.value(sa).clone(), g.value(sb).clone());
        prop_assert!(va.max_abs_diff(&vb) < 1e-9);
        let (outer, len) = if axis == 0 { (cols, rows) } else { (rows, cols) };
        for o in 0..outer {
            let s: f64 = (0..len).map(|k| if axis == 0 { va.at(k, o) } else { va.at(o, k) }).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn relative_error_uses_floor_for_tiny_values() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-12);
}
