//! Gradient checks: every primitive backward rule, composite chains, and
//! basic analytic-derivative sanity cases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use waunet_core::gradcheck::{grad_check, primitive_cases, GradCheckOptions};
use waunet_core::ops::OpKind;
use waunet_core::{Graph, Tensor};

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(vec![4], vec![1.0f64, -2.0, 3.0, 0.5]).unwrap(), true);
    let s = g.sum_all(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_sum_of_squares_is_two_x() {
    let vals = vec![1.0f64, -2.0, 3.0, 0.5];
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(vec![4], vals.clone()).unwrap(), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum_all(sq).unwrap();
    g.backward(s).unwrap();
    let grad = g.grad(x).unwrap();
    for (g, v) in grad.iter().zip(vals.iter()) {
        assert!((g - 2.0 * v).abs() < 1e-12);
    }
}

/// Every primitive kind: max relative error < 1e-5 at eps 1e-4, f64, over
/// several seeds of random inputs with extents <= 8.
#[test]
fn every_primitive_passes_gradient_check() {
    for case in primitive_cases() {
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let leaves = (case.make_leaves)(&mut rng);
            let outcome = grad_check(&leaves, case.build, &GradCheckOptions::default())
                .unwrap_or_else(|e| panic!("{}: {e}", case.kind.name()));
            assert!(
                outcome.max_rel_err < 1e-5,
                "{} seed {seed}: rel err {} (analytic {} vs numeric {})",
                case.kind.name(),
                outcome.max_rel_err,
                outcome.worst_analytic,
                outcome.worst_numeric
            );
        }
    }
}

#[test]
fn injected_sign_fault_is_caught_by_comparison_with_numeric() {
    // Run the relu case but corrupt its backward; the analytic gradient then
    // disagrees with finite differences at O(1) relative error.
    let case = primitive_cases()
        .into_iter()
        .find(|c| c.kind == OpKind::Relu)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let leaves = (case.make_leaves)(&mut rng);

    let mut g = Graph::<f64>::new();
    let ids: Vec<_> = leaves.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = (case.build)(&mut g, &ids).unwrap();
    g.inject_backward_fault(OpKind::Relu);
    g.backward(loss).unwrap();
    let faulty = g.take_grad(ids[0]).unwrap();

    // numeric reference from the clean path
    let clean = grad_check(&leaves, case.build, &GradCheckOptions::default()).unwrap();
    assert!(clean.max_rel_err < 1e-5);

    // the faulty analytic gradient must differ grossly somewhere
    let mut g2 = Graph::<f64>::new();
    let ids2: Vec<_> = leaves.iter().map(|t| g2.leaf(t.clone(), true)).collect();
    let loss2 = (case.build)(&mut g2, &ids2).unwrap();
    g2.backward(loss2).unwrap();
    let good = g2.take_grad(ids2[0]).unwrap();
    let max_rel: f64 = faulty
        .iter()
        .zip(good.iter())
        .map(|(f, c)| (f - c).abs() / c.abs().max(f.abs()).max(1e-8))
        .fold(0.0, f64::max);
    assert!(max_rel > 1e-2, "fault not visible: {max_rel}");
}

/// conv2d -> relu -> softmax -> cross-entropy chain against central
/// differences, at f64.
#[test]
fn composite_conv_relu_softmax_cross_entropy_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = Tensor::<f64>::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[3, 2, 3, 3], -0.7, 0.7, &mut rng);
    let labels: Vec<u32> = (0..16).map(|i| (i % 3) as u32).collect();

    let outcome = grad_check(
        &[x, w],
        move |g, ids| {
            let c = g.conv2d(ids[0], ids[1], 1, 1)?;
            let r = g.relu(c)?;
            let s = g.softmax(r, 1)?;
            // scale up so logits are not all tiny
            let s10 = g.scalar_mul(s, 10.0)?;
            g.cross_entropy(s10, &labels)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(outcome.max_rel_err < 1e-5, "rel err {}", outcome.max_rel_err);
}

/// Gradients flow through shared inputs used by several consumers.
#[test]
fn fan_out_accumulates_gradients() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(vec![2], vec![3.0f64, -1.0]).unwrap(), true);
    let a = g.scalar_mul(x, 2.0).unwrap();
    let b = g.scalar_mul(x, 5.0).unwrap();
    let s1 = g.add(a, b).unwrap();
    let total = g.sum_all(s1).unwrap();
    g.backward(total).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[7.0, 7.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(vec![2], vec![1.0f64, 2.0]).unwrap(), true);
    let c = g.constant(Tensor::from_vec(vec![2], vec![4.0f64, 5.0]).unwrap());
    let p = g.mul(x, c).unwrap();
    let s = g.sum_all(p).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 5.0]);
    assert!(g.grad(c).is_none());
}
