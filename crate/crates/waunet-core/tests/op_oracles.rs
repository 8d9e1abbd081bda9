//! Forward kernels checked against independent brute-force oracles.
//!
//! The oracles here are deliberately naive re-derivations (nested loops over
//! the mathematical definitions) and share no code with the engine kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use waunet_core::{Graph, Tensor};

fn uni(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Direct 7-nested-loop cross-correlation.
fn conv2d_oracle(
    x: &Tensor<f32>,
    w: &Tensor<f32>,
    stride: usize,
    pad: usize,
) -> Tensor<f32> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::<f32>::zeros(&[n, cout, oh, ow]);
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at4(ni, ci, iy as usize, ix as usize)
                                    * w.at4(co, ci, ky, kx);
                            }
                        }
                    }
                    let idx = ((ni * cout + co) * oh + oy) * ow + ox;
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

/// Window-scan max pooling.
fn maxpool_oracle(x: &Tensor<f32>) -> Tensor<f32> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = Tensor::<f32>::zeros(&[n, c, h / 2, w / 2]);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.at4(ni, ci, 2 * oy + dy, 2 * ox + dx));
                        }
                    }
                    let idx = ((ni * c + ci) * (h / 2) + oy) * (w / 2) + ox;
                    out.data_mut()[idx] = m;
                }
            }
        }
    }
    out
}

/// Scatter-add transposed convolution (kernel 2x2, stride 2).
fn deconv_oracle(x: &Tensor<f32>, w: &Tensor<f32>) -> Tensor<f32> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[1];
    let mut out = Tensor::<f32>::zeros(&[n, cout, 2 * h, 2 * wd]);
    for ni in 0..n {
        for ci in 0..cin {
            for co in 0..cout {
                for iy in 0..h {
                    for ix in 0..wd {
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let idx = ((ni * cout + co) * 2 * h + (2 * iy + ky)) * 2 * wd
                                    + 2 * ix
                                    + kx;
                                out.data_mut()[idx] +=
                                    x.at4(ni, ci, iy, ix) * w.at4(ci, co, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

fn run_conv(x: &Tensor<f32>, w: &Tensor<f32>, stride: usize, pad: usize) -> Tensor<f32> {
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let wi = g.constant(w.clone());
    let y = g.conv2d(xi, wi, stride, pad).unwrap();
    g.value(y).clone()
}

#[test]
fn conv2d_identity_kernel_copies_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = uni(&[1, 1, 3, 3], &mut rng);
    let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    let y = run_conv(&x, &w, 1, 0);
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv2d_padding_keeps_only_center_tap() {
    // 1x1 input, 3x3 all-ones kernel, pad 1: only the center tap overlaps.
    let x = Tensor::from_vec(vec![1, 1, 1, 1], vec![5.0]).unwrap();
    let w = Tensor::full(&[1, 1, 3, 3], 1.0f32);
    let y = run_conv(&x, &w, 1, 1);
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.data()[0], 5.0);
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = uni(&[2, 4, 8, 8], &mut rng);
    let w = uni(&[6, 4, 3, 3], &mut rng);
    let y = run_conv(&x, &w, 1, 1);
    assert_eq!(y.shape(), &[2, 6, 8, 8]);
    assert!(max_abs_diff(&y, &conv2d_oracle(&x, &w, 1, 1)) < 1e-5);
}

#[test]
fn conv2d_oracle_agreement_over_100_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let n = rng.gen_range(1..3);
        let cin = rng.gen_range(1..4);
        let cout = rng.gen_range(1..4);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let pad = rng.gen_range(0..2usize);
        let stride = rng.gen_range(1..3usize);
        // pick an extent that divides out exactly
        let mut h = rng.gen_range(k.max(2)..=8);
        while (h + 2 * pad) < k || (h + 2 * pad - k) % stride != 0 {
            h += 1;
        }
        let x = uni(&[n, cin, h, h], &mut rng);
        let w = uni(&[cout, cin, k, k], &mut rng);
        let y = run_conv(&x, &w, stride, pad);
        let o = conv2d_oracle(&x, &w, stride, pad);
        assert!(
            max_abs_diff(&y, &o) < 1e-5,
            "case {case}: k={k} stride={stride} pad={pad} h={h}"
        );
    }
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let w = g.constant(Tensor::zeros(&[2, 4, 3, 3]));
    assert!(g.conv2d(x, w, 1, 1).is_err());
}

#[test]
fn conv2d_rejects_non_integral_output() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 5, 5]));
    let w = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
    // (5 - 2) % 2 != 0
    assert!(g.conv2d(x, w, 2, 0).is_err());
}

#[test]
fn maxpool_basic_window() {
    let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut g = Graph::new();
    let xi = g.constant(x);
    let y = g.maxpool2x2(xi).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);
}

#[test]
fn maxpool_rejects_odd_extents() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 3, 4]));
    assert!(g.maxpool2x2(x).is_err());
}

#[test]
fn maxpool_tie_gradient_goes_to_first_in_row_major_order() {
    let x = Tensor::full(&[1, 1, 4, 4], 2.5f64);
    let mut g = Graph::new();
    let xi = g.leaf(x, true);
    let y = g.maxpool2x2(xi).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 2.5));
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    let grad = g.grad(xi).unwrap();
    for oy in 0..2 {
        for ox in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let expect = if dy == 0 && dx == 0 { 1.0 } else { 0.0 };
                    assert_eq!(grad[(2 * oy + dy) * 4 + 2 * ox + dx], expect);
                }
            }
        }
    }
}

#[test]
fn maxpool_matches_window_scan_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = uni(&[1, 3, 8, 8], &mut rng);
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let y = g.maxpool2x2(xi).unwrap();
    assert_eq!(g.value(y).data(), maxpool_oracle(&x).data());
}

#[test]
fn deconv_single_tap_scatter() {
    let x = Tensor::from_vec(vec![1, 1, 1, 1], vec![3.0f32]).unwrap();
    let w = Tensor::full(&[1, 1, 2, 2], 1.0f32);
    let mut g = Graph::new();
    let xi = g.constant(x);
    let wi = g.constant(w);
    let y = g.deconv2d(xi, wi).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 3.0));
}

#[test]
fn deconv_shape_arithmetic() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 8, 16, 16]));
    let w = g.constant(Tensor::zeros(&[8, 4, 2, 2]));
    let y = g.deconv2d(x, w).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 32, 32]);
}

#[test]
fn deconv_matches_scatter_add_oracle_over_100_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.gen_range(1..3);
        let cin = rng.gen_range(1..4);
        let cout = rng.gen_range(1..4);
        let h = rng.gen_range(1..6);
        let w = rng.gen_range(1..6);
        let x = uni(&[n, cin, h, w], &mut rng);
        let wt = uni(&[cin, cout, 2, 2], &mut rng);
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let wi = g.constant(wt.clone());
        let y = g.deconv2d(xi, wi).unwrap();
        assert!(max_abs_diff(g.value(y), &deconv_oracle(&x, &wt)) < 1e-5);
    }
}

#[test]
fn softmax_uniform_and_closed_form() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![3], vec![0.0f64, 0.0, 0.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    let x = g.constant(Tensor::from_vec(vec![2], vec![0.0f64, (2.0f64).ln()]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((d[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn softmax_is_stable_for_large_inputs() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![3], vec![1000.0f32, 1000.0, 999.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    let d = g.value(y).data();
    assert!(d.iter().all(|v| v.is_finite() && *v > 0.0 && *v <= 1.0));
    assert!((d.iter().sum::<f32>() - 1.0).abs() < 1e-6);
}

#[test]
fn softmax_slices_sum_to_one_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = uni(&[3, 5, 4], &mut rng);
    let mut g = Graph::new();
    let xi = g.constant(x);
    let y = g.softmax(xi, 1).unwrap();
    let t = g.value(y);
    for outer in 0..3 {
        for inner in 0..4 {
            let mut sum = 0.0f32;
            for a in 0..5 {
                let v = t.data()[(outer * 5 + a) * 4 + inner];
                assert!(v > 0.0 && v <= 1.0);
                sum += v;
            }
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_rejects_non_finite_input() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![2], vec![f32::NAN, 0.0]).unwrap());
    assert!(g.softmax(x, 0).is_err());
    let x = g.constant(Tensor::from_vec(vec![2], vec![f32::INFINITY, 0.0]).unwrap());
    assert!(g.softmax(x, 0).is_err());
}

#[test]
fn cross_entropy_uniform_logits_is_ln_k() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::zeros(&[1, 4, 2, 2]));
    let labels = vec![0u32, 1, 2, 3];
    let loss = g.cross_entropy(x, &labels).unwrap();
    assert!((g.scalar_value(loss).unwrap() - (4.0f64).ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_approaches_zero_with_margin() {
    let mut prev = f64::INFINITY;
    for &margin in &[2.0, 8.0, 32.0] {
        let mut t = Tensor::<f64>::zeros(&[1, 3, 1, 1]);
        t.data_mut()[1] = margin; // class 1 is correct
        let mut g = Graph::new();
        let x = g.constant(t);
        let loss = g.cross_entropy(x, &[1]).unwrap();
        let v = g.scalar_value(loss).unwrap();
        assert!(v < prev);
        prev = v;
    }
    assert!(prev < 1e-10);
}

#[test]
fn cross_entropy_matches_per_pixel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::<f64>::uniform(&[1, 3, 2, 2], -2.0, 2.0, &mut rng);
    let labels: Vec<u32> = (0..4).map(|_| rng.gen_range(0..3)).collect();

    // independent oracle: per-pixel -log softmax via direct exp sums
    let mut total = 0.0f64;
    let plane = 4;
    for p in 0..plane {
        let z: Vec<f64> = (0..3).map(|c| x.data()[c * plane + p]).collect();
        let sum_exp: f64 = z.iter().map(|v| v.exp()).sum();
        let prob = z[labels[p] as usize].exp() / sum_exp;
        total += -prob.ln();
    }
    let expect = total / 4.0;

    let mut g = Graph::new();
    let xi = g.constant(x);
    let loss = g.cross_entropy(xi, &labels).unwrap();
    assert!((g.scalar_value(loss).unwrap() - expect).abs() < 1e-6);
}

#[test]
fn cross_entropy_rejects_out_of_range_label() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f32>::zeros(&[1, 3, 1, 2]));
    let err = g.cross_entropy(x, &[0, 7]).unwrap_err();
    assert!(matches!(err, waunet_core::Error::Label { class: 7, .. }));
}

#[test]
fn forward_passes_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = uni(&[2, 3, 8, 8], &mut rng);
    let w = uni(&[4, 3, 3, 3], &mut rng);
    let run = || -> Vec<f32> {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let wi = g.constant(w.clone());
        let c = g.conv2d(xi, wi, 1, 1).unwrap();
        let r = g.relu(c).unwrap();
        let p = g.maxpool2x2(r).unwrap();
        let s = g.softmax(p, 1).unwrap();
        g.value(s).data().to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
