//! Network-level properties: shape contract, attention ablation at init,
//! parameter accounting, determinism, and end-to-end gradient soundness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use waunet_core::gradcheck::{grad_check, GradCheckOptions};
use waunet_core::net::{build_waunet, fuse, labels_to_targets, predict_labels, NetConfig, WauNet};
use waunet_core::optim::{adam_step, AdamConfig, AdamState};
use waunet_core::{Graph, Scalar, Tensor};

/// Closed-form parameter count, written independently of the builder: a sum
/// over conv kernels, fusion layers, attention projections and positional
/// tables, following the grid wiring rules.
fn analytic_param_count(cfg: &NetConfig) -> usize {
    let mut total = 0usize;
    let levels = cfg.levels;
    for i in 0..levels {
        let f = cfg.filters[i];
        for j in 0..levels - i {
            // three 3x3 convs with bias
            let conv1_in = if j == 0 {
                if i == 0 {
                    cfg.in_channels
                } else {
                    cfg.filters[i - 1]
                }
            } else {
                f
            };
            total += f * conv1_in * 9 + f; // conv1
            total += 2 * (f * f * 9 + f); // conv2, conv3
            if cfg.batch_norm {
                total += 3 * 2 * f;
            }
            if j > 0 {
                total += cfg.filters[i + 1] * f * 4 + f; // deconv + bias
                total += f * ((j + 1) * f) + f; // 1x1 fuse + bias
            }
        }
        // attention: per layer, two axis passes
        let c = f;
        let len = cfg.input_size >> i;
        let per_axis = 4 * c * c + 3 * (2 * len - 1) * c;
        total += cfg.attention_depths[i] * 2 * per_axis;
    }
    total += cfg.num_classes * cfg.filters[0] + cfg.num_classes; // head
    total
}

fn forward_once<T: Scalar>(net: &WauNet<T>, images: &Tensor<T>, use_attention: bool) -> Tensor<T> {
    let mut g = Graph::new();
    let vars = net.attach(&mut g, |_| false);
    let x = g.constant(images.clone());
    let logits = net.forward_opts(&mut g, &vars, x, use_attention).unwrap();
    g.value(logits).clone()
}

#[test]
fn desk_forward_has_full_resolution_class_logits() {
    let cfg = NetConfig::desk();
    let net = build_waunet::<f32>(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let images = Tensor::uniform(&[2, 1, 32, 32], 0.0, 1.0, &mut rng);
    let logits = forward_once(&net, &images, true);
    assert_eq!(logits.shape(), &[2, 5, 32, 32]);
    assert!(logits.is_all_finite());
}

#[test]
fn shape_contract_holds_across_valid_configs() {
    for (levels, filters, depths, heads, size) in [
        (1usize, vec![6], vec![1], 2usize, 8usize),
        (2, vec![4, 8], vec![1, 1], 2, 12),
        (3, vec![4, 8, 12], vec![1, 1, 2], 2, 16),
    ] {
        let cfg = NetConfig {
            levels,
            filters,
            attention_depths: depths,
            heads,
            num_classes: 3,
            input_size: size,
            in_channels: 1,
            batch_norm: false,
        };
        let net = build_waunet::<f32>(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let images = Tensor::uniform(&[1, 1, size, size], 0.0, 1.0, &mut rng);
        let logits = forward_once(&net, &images, true);
        assert_eq!(logits.shape(), &[1, 3, size, size]);
    }
}

#[test]
fn single_level_degenerates_to_cnn_attention_head() {
    let cfg = NetConfig {
        levels: 1,
        filters: vec![6],
        attention_depths: vec![2],
        heads: 2,
        num_classes: 4,
        input_size: 8,
        in_channels: 1,
        batch_norm: false,
    };
    let net = build_waunet::<f64>(&cfg, 11).unwrap();
    // parameter names: only x0_0 convs, att0 layers, and the head
    for (name, _) in net.params.iter() {
        assert!(
            name.starts_with("x0_0.") || name.starts_with("att0.") || name.starts_with("head."),
            "unexpected parameter {name}"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let images = Tensor::uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut rng);
    let logits = forward_once(&net, &images, true);
    assert_eq!(logits.shape(), &[1, 4, 8, 8]);
}

#[test]
fn parameter_count_matches_analytic_formula() {
    for cfg in [NetConfig::desk(), NetConfig::paper()] {
        // Building the paper-scale store allocates ~40M floats; that is fine
        // for a shape test but we keep it to f32.
        let net = build_waunet::<f32>(&cfg, 1).unwrap();
        assert_eq!(net.params.total_params(), analytic_param_count(&cfg));
    }
}

#[test]
fn parameter_count_strictly_increases_with_each_filter_width() {
    let base = NetConfig::desk();
    let base_count = analytic_param_count(&base);
    for i in 0..base.levels {
        let mut cfg = base.clone();
        cfg.filters[i] += cfg.heads; // keep divisibility
        let grown = analytic_param_count(&cfg);
        assert!(grown > base_count, "level {i}: {grown} vs {base_count}");
        // and the built store agrees with the formula
        let net = build_waunet::<f32>(&cfg, 1).unwrap();
        assert_eq!(net.params.total_params(), grown);
    }
}

#[test]
fn zero_initialized_attention_equals_attention_free_graph_bit_exact() {
    let cfg = NetConfig::desk();
    let net = build_waunet::<f32>(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let images = Tensor::uniform(&[1, 1, 32, 32], 0.0, 1.0, &mut rng);
    let with_attention = forward_once(&net, &images, true);
    let without = forward_once(&net, &images, false);
    assert_eq!(with_attention.shape(), without.shape());
    for (a, b) in with_attention.data().iter().zip(without.data().iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn fixed_seed_means_bit_identical_parameters_and_outputs() {
    let cfg = NetConfig::desk();
    let a = build_waunet::<f64>(&cfg, 99).unwrap();
    let b = build_waunet::<f64>(&cfg, 99).unwrap();
    for ((na, ta), (nb, tb)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(na, nb);
        assert!(ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let images = Tensor::uniform(&[1, 1, 32, 32], 0.0, 1.0, &mut rng);
    let la = forward_once(&a, &images, true);
    let lb = forward_once(&b, &images, true);
    assert!(la
        .data()
        .iter()
        .zip(lb.data().iter())
        .all(|(x, y)| x.to_bits() == y.to_bits()));

    let c = build_waunet::<f64>(&cfg, 100).unwrap();
    assert!(c
        .params
        .iter()
        .zip(a.params.iter())
        .any(|((_, tc), (_, ta))| tc.data() != ta.data()));
}

#[test]
fn initial_loss_is_ln_k() {
    let cfg = NetConfig::desk();
    let net = build_waunet::<f64>(&cfg, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let images = Tensor::uniform(&[2, 1, 32, 32], 0.0, 1.0, &mut rng);
    let labels: Vec<u32> = (0..2 * 32 * 32)
        .map(|i| (i % cfg.num_classes) as u32)
        .collect();
    let mut g = Graph::new();
    let vars = net.attach(&mut g, |_| false);
    let x = g.constant(images);
    let logits = net.forward(&mut g, &vars, x).unwrap();
    let loss = g.cross_entropy(logits, &labels).unwrap();
    let v = g.scalar_value(loss).unwrap();
    assert!(
        (v - (cfg.num_classes as f64).ln()).abs() < 0.1,
        "initial loss {v} vs ln K {}",
        (cfg.num_classes as f64).ln()
    );
}

/// After one optimizer step the attention output projections are non-zero,
/// so a second backward reaches every parameter.
#[test]
fn gradients_reach_every_parameter_after_one_step() {
    let cfg = NetConfig {
        levels: 2,
        filters: vec![4, 8],
        attention_depths: vec![1, 1],
        heads: 2,
        num_classes: 3,
        input_size: 8,
        in_channels: 1,
        batch_norm: false,
    };
    let mut net = build_waunet::<f64>(&cfg, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let images = Tensor::uniform(&[2, 1, 8, 8], 0.0, 1.0, &mut rng);
    let labels: Vec<u32> = (0..2 * 8 * 8).map(|i| (i % 3) as u32).collect();

    let run_backward = |net: &WauNet<f64>| -> Vec<Option<Vec<f64>>> {
        let mut g = Graph::new();
        let vars = net.attach(&mut g, |_| true);
        let x = g.constant(images.clone());
        let logits = net.forward(&mut g, &vars, x).unwrap();
        let loss = g.cross_entropy(logits, &labels).unwrap();
        g.backward(loss).unwrap();
        vars.vars.iter().map(|&id| g.take_grad(id)).collect()
    };

    let grads = run_backward(&net);
    let mut state = AdamState::new(&net.params);
    adam_step(&mut net.params, &grads, &mut state, 1e-3, &AdamConfig::default()).unwrap();

    let grads2 = run_backward(&net);
    for ((name, _), grad) in net.params.iter().zip(grads2.iter()) {
        let grad = grad.as_ref().unwrap_or_else(|| panic!("no grad for {name}"));
        assert!(
            grad.iter().any(|&v| v != 0.0),
            "parameter {name} has an all-zero gradient after one step"
        );
    }
}

/// The full desk-scale network against central differences: >= 200 sampled
/// parameters, f64, eps 1e-4, max relative error < 1e-4.
#[test]
fn desk_network_passes_sampled_gradient_check() {
    let cfg = NetConfig::desk();
    let mut net = build_waunet::<f64>(&cfg, 55).unwrap();
    waunet_core::net::randomize_for_gradcheck(&mut net, 55);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let images = Tensor::uniform(&[1, 1, 32, 32], 0.0, 1.0, &mut rng);
    let labels: Vec<u32> = (0..32 * 32)
        .map(|i| (i % cfg.num_classes) as u32)
        .collect();

    let leaves: Vec<Tensor<f64>> = net.params.iter().map(|(_, t)| t.clone()).collect();
    let names: Vec<String> = net.params.iter().map(|(n, _)| n.to_string()).collect();
    let cfg2 = cfg.clone();
    let outcome = grad_check(
        &leaves,
        move |g, ids| {
            // drive the net's forward wiring off the perturbed leaves
            let net = WauNet {
                config: cfg2.clone(),
                params: waunet_core::params::ParamStore::new(),
            };
            let vars = waunet_core::params::AttachedParams::from_pairs(
                names.iter().cloned().zip(ids.iter().copied()),
            );
            let x = g.constant(images.clone());
            let logits = net.forward(g, &vars, x)?;
            g.cross_entropy(logits, &labels)
        },
        &GradCheckOptions {
            eps: 1e-4,
            samples: Some(220),
            seed: 1234,
        },
    )
    .unwrap();
    assert!(outcome.coords_checked >= 200);
    assert!(outcome.max_rel_err < 1e-4, "rel err {}", outcome.max_rel_err);
}

#[test]
fn fuse_is_identity_with_identity_weights() {
    let mut g = Graph::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::uniform(&[1, 4, 5, 5], -1.0, 1.0, &mut rng);
    let mut w = Tensor::<f64>::zeros(&[4, 4, 1, 1]);
    for i in 0..4 {
        w.data_mut()[i * 4 + i] = 1.0;
    }
    let xi = g.constant(x.clone());
    let wi = g.constant(w);
    let bi = g.constant(Tensor::zeros(&[4]));
    let y = fuse(&mut g, &[xi], wi, bi).unwrap();
    assert_eq!(g.value(y).data(), x.data());
}

#[test]
fn fuse_block_identity_reproduces_concatenation() {
    let mut g = Graph::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = Tensor::uniform(&[1, 4, 3, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::uniform(&[1, 4, 3, 3], -1.0, 1.0, &mut rng);
    let mut w = Tensor::<f64>::zeros(&[8, 8, 1, 1]);
    for i in 0..8 {
        w.data_mut()[i * 8 + i] = 1.0;
    }
    let ai = g.constant(a.clone());
    let bi = g.constant(b.clone());
    let wi = g.constant(w);
    let bias = g.constant(Tensor::zeros(&[8]));
    let y = fuse(&mut g, &[ai, bi], wi, bias).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[1, 8, 3, 3]);
    for c in 0..4 {
        for p in 0..9 {
            assert!((out.data()[c * 9 + p] - a.data()[c * 9 + p]).abs() < 1e-6);
            assert!((out.data()[(c + 4) * 9 + p] - b.data()[c * 9 + p]).abs() < 1e-6);
        }
    }
}

#[test]
fn fuse_matches_concat_matmul_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = Tensor::<f64>::uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);
    let b = Tensor::<f64>::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[4, 5, 1, 1], -1.0, 1.0, &mut rng);
    let bias = Tensor::<f64>::uniform(&[4], -0.5, 0.5, &mut rng);

    let mut g = Graph::new();
    let ai = g.constant(a.clone());
    let bi = g.constant(b.clone());
    let wi = g.constant(w.clone());
    let bb = g.constant(bias.clone());
    let y = fuse(&mut g, &[ai, bi], wi, bb).unwrap();
    let out = g.value(y);

    for co in 0..4 {
        for r in 0..4 {
            for c in 0..4 {
                let mut acc = bias.data()[co];
                for ci in 0..5 {
                    let xv = if ci < 3 {
                        a.at4(0, ci, r, c)
                    } else {
                        b.at4(0, ci - 3, r, c)
                    };
                    acc += xv * w.at4(co, ci, 0, 0);
                }
                assert!((out.at4(0, co, r, c) - acc).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn fuse_rejects_spatial_mismatch() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let b = g.constant(Tensor::zeros(&[1, 2, 8, 8]));
    let w = g.constant(Tensor::zeros(&[2, 4, 1, 1]));
    let bias = g.constant(Tensor::zeros(&[2]));
    assert!(fuse(&mut g, &[a, b], w, bias).is_err());
}

#[test]
fn predict_labels_is_invariant_under_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let logits = Tensor::<f32>::uniform(&[2, 5, 6, 6], -3.0, 3.0, &mut rng);
    let direct = predict_labels(&logits, (1.0, 1.0)).unwrap();
    let mut g = Graph::new();
    let li = g.constant(logits);
    let sm = g.softmax(li, 1).unwrap();
    let via_softmax = predict_labels(g.value(sm), (1.0, 1.0)).unwrap();
    assert_eq!(direct, via_softmax);
}

#[test]
fn labels_round_trip_into_targets() {
    let spec = waunet_core::phantom::PhantomSpec::desk(32, 3);
    let (_, lab) = waunet_core::phantom::generate_phantom(&spec).unwrap();
    let targets = labels_to_targets(&[&lab]);
    assert_eq!(targets.len(), 32 * 32);
    assert!(targets.iter().all(|&t| t <= 4));
}
