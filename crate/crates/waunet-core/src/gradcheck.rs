//! Central-difference gradient checking.
//!
//! Always runs at `f64`: single-precision finite differences do not have
//! enough digits left after cancellation to verify anything.

use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, VarId};
use crate::ops::OpKind;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Check all coordinates (`None`) or a seeded sample of this many.
    pub samples: Option<usize>,
    pub seed: u64,
    /// Fault injection: negate the gradients the named op kind produces in
    /// the analytic pass, to prove the harness catches broken kernels.
    pub inject_fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            samples: None,
            seed: 0,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckOutcome {
    /// max over checked coordinates of
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Coordinates rejected because the perturbation interval crossed a
    /// non-differentiable point (ReLU kink or pooling argmax change).
    pub coords_skipped: usize,
    pub worst_leaf: usize,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares the analytic gradient of `build` against central differences.
///
/// `build` must be deterministic: it is re-run twice per checked coordinate
/// with one leaf entry perturbed by `±eps`.
pub fn grad_check<F>(
    leaves: &[Tensor<f64>],
    build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckOutcome>
where
    F: Fn(&mut Graph<f64>, &[VarId]) -> Result<VarId>,
{
    // Analytic pass.
    let mut graph = Graph::new();
    let ids: Vec<VarId> = leaves
        .iter()
        .map(|t| graph.leaf(t.clone(), true))
        .collect();
    let loss = build(&mut graph, &ids)?;
    if let Some(kind) = opts.inject_fault {
        graph.inject_backward_fault(kind);
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(leaves.iter())
        .map(|(&id, t)| {
            graph
                .take_grad(id)
                .unwrap_or_else(|| alloc::vec![0.0; t.numel()])
        })
        .collect();

    // Candidate coordinates: everything, shuffled when sampling.
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (li, t) in leaves.iter().enumerate() {
        for ci in 0..t.numel() {
            candidates.push((li, ci));
        }
    }
    let target = match opts.samples {
        None => candidates.len(),
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            for i in (1..candidates.len()).rev() {
                candidates.swap(i, rng.gen_range(0..=i));
            }
            n.min(candidates.len())
        }
    };

    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    let eval = |work: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let ids: Vec<VarId> = work.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &ids)?;
        Ok((g.scalar_value(loss)?, g.branch_signature()))
    };

    let mut out = GradCheckOutcome::default();
    for &(li, ci) in candidates.iter() {
        if out.coords_checked >= target {
            break;
        }
        let orig = work[li].data()[ci];
        work[li].data_mut()[ci] = orig + opts.eps;
        let (plus, sig_plus) = eval(&work)?;
        work[li].data_mut()[ci] = orig - opts.eps;
        let (minus, sig_minus) = eval(&work)?;
        work[li].data_mut()[ci] = orig;

        if sig_plus != sig_minus {
            // A ReLU mask or pooling argmax flips inside the perturbation
            // interval; the difference quotient does not estimate the
            // derivative there. Resample instead.
            out.coords_skipped += 1;
            continue;
        }

        let numeric = (plus - minus) / (2.0 * opts.eps);
        let a = analytic[li][ci];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        out.coords_checked += 1;
        if rel > out.max_rel_err {
            out.max_rel_err = rel;
            out.worst_leaf = li;
            out.worst_coord = ci;
            out.worst_analytic = a;
            out.worst_numeric = numeric;
        }
    }
    Ok(out)
}

/// A self-contained gradient-check scenario for one primitive kind.
pub struct PrimitiveCase {
    pub kind: OpKind,
    pub make_leaves: fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    pub build: fn(&mut Graph<f64>, &[VarId]) -> Result<VarId>,
}

/// Scalarizes `out` as `sum(out * c)` with a fixed random weighting so the
/// upstream gradient is non-uniform; uniform gradients hide transposition
/// bugs in backward rules.
pub fn weighted_sum(g: &mut Graph<f64>, out: VarId) -> Result<VarId> {
    let shape = g.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FF_EE00);
    let c = g.constant(Tensor::uniform(&shape, -1.0, 1.0, &mut rng));
    let prod = g.mul(out, c)?;
    g.sum_all(prod)
}

fn uni(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Random values kept away from the ReLU kink so central differences stay on
/// one side.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::<f64>::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.gen_range(0.05..1.0);
        *v = if rng.gen_range(0..2) == 0 { mag } else { -mag };
    }
    t
}

/// Pool input whose 2x2 windows hold well-separated values, so a ±eps
/// perturbation cannot flip an argmax.
fn separated_windows(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::<f64>::zeros(shape);
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let data = t.data_mut();
    for plane in 0..n * c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let idx = [
                    (plane * h + 2 * oy) * w + 2 * ox,
                    (plane * h + 2 * oy) * w + 2 * ox + 1,
                    (plane * h + 2 * oy + 1) * w + 2 * ox,
                    (plane * h + 2 * oy + 1) * w + 2 * ox + 1,
                ];
                loop {
                    let vals = [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ];
                    let mut ok = true;
                    for i in 0..4 {
                        for j in i + 1..4 {
                            if (vals[i] - vals[j]).abs() < 5e-3 {
                                ok = false;
                            }
                        }
                    }
                    if ok {
                        for (slot, v) in idx.iter().zip(vals.iter()) {
                            data[*slot] = *v;
                        }
                        break;
                    }
                }
            }
        }
    }
    t
}

/// One gradient-check scenario per primitive op kind, in `OpKind::ALL` order.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    use OpKind::*;
    alloc::vec![
        PrimitiveCase {
            kind: Add,
            make_leaves: |rng| alloc::vec![uni(&[3, 4], rng), uni(&[3, 4], rng)],
            build: |g, ids| {
                let y = g.add(ids[0], ids[1])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: Mul,
            make_leaves: |rng| alloc::vec![uni(&[2, 3, 4], rng), uni(&[2, 3, 4], rng)],
            build: |g, ids| {
                let y = g.mul(ids[0], ids[1])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: ScalarMul,
            make_leaves: |rng| alloc::vec![uni(&[3, 5], rng)],
            build: |g, ids| {
                let y = g.scalar_mul(ids[0], 1.7)?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: Relu,
            make_leaves: |rng| alloc::vec![away_from_zero(&[4, 4], rng)],
            build: |g, ids| {
                let y = g.relu(ids[0])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: BiasAddChan,
            make_leaves: |rng| alloc::vec![uni(&[2, 3, 4, 4], rng), uni(&[3], rng)],
            build: |g, ids| {
                let y = g.bias_add_chan(ids[0], ids[1])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: Matmul,
            make_leaves: |rng| alloc::vec![uni(&[3, 4], rng), uni(&[4, 5], rng)],
            build: |g, ids| {
                let y = g.matmul(ids[0], ids[1])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: Bmm,
            make_leaves: |rng| alloc::vec![uni(&[2, 3, 4], rng), uni(&[2, 4, 5], rng)],
            build: |g, ids| {
                let y = g.bmm(ids[0], ids[1])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: BmmNt,
            make_leaves: |rng| alloc::vec![uni(&[2, 3, 4], rng), uni(&[2, 5, 4], rng)],
            build: |g, ids| {
                let y = g.bmm_nt(ids[0], ids[1])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: Permute,
            make_leaves: |rng| alloc::vec![uni(&[2, 3, 4, 5], rng)],
            build: |g, ids| {
                let y = g.permute(ids[0], &[2, 0, 3, 1])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: Reshape,
            make_leaves: |rng| alloc::vec![uni(&[2, 3, 4], rng)],
            build: |g, ids| {
                let y = g.reshape(ids[0], &[4, 6])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: Concat,
            make_leaves: |rng| alloc::vec![
                uni(&[2, 2, 3], rng),
                uni(&[2, 1, 3], rng),
                uni(&[2, 4, 3], rng)
            ],
            build: |g, ids| {
                let y = g.concat(ids, 1)?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: SumAll,
            make_leaves: |rng| alloc::vec![uni(&[3, 4], rng)],
            build: |g, ids| g.sum_all(ids[0]),
        },
        PrimitiveCase {
            kind: MeanAll,
            make_leaves: |rng| alloc::vec![uni(&[3, 4], rng)],
            build: |g, ids| g.mean_all(ids[0]),
        },
        PrimitiveCase {
            kind: Softmax,
            make_leaves: |rng| alloc::vec![uni(&[2, 3, 4], rng)],
            build: |g, ids| {
                let y = g.softmax(ids[0], 1)?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: Conv2d,
            make_leaves: |rng| alloc::vec![uni(&[2, 3, 6, 6], rng), uni(&[4, 3, 3, 3], rng)],
            build: |g, ids| {
                let y = g.conv2d(ids[0], ids[1], 1, 1)?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: MaxPool2x2,
            make_leaves: |rng| alloc::vec![separated_windows(&[1, 2, 6, 6], rng)],
            build: |g, ids| {
                let y = g.maxpool2x2(ids[0])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: Deconv2d,
            make_leaves: |rng| alloc::vec![uni(&[2, 3, 4, 4], rng), uni(&[3, 4, 2, 2], rng)],
            build: |g, ids| {
                let y = g.deconv2d(ids[0], ids[1])?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: BatchNorm2d,
            make_leaves: |rng| alloc::vec![
                uni(&[2, 3, 4, 4], rng),
                Tensor::uniform(&[3], 0.5, 1.5, rng),
                uni(&[3], rng)
            ],
            build: |g, ids| {
                let y = g.batch_norm2d(ids[0], ids[1], ids[2], 1e-5)?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: CrossEntropy,
            make_leaves: |rng| alloc::vec![uni(&[2, 4, 3, 3], rng)],
            build: |g, ids| {
                let n_px = 2 * 3 * 3;
                let labels: Vec<u32> = (0..n_px).map(|i| ((i * 7 + 3) % 4) as u32).collect();
                g.cross_entropy(ids[0], &labels)
            },
        },
        PrimitiveCase {
            kind: RelLogitsQ,
            make_leaves: |rng| alloc::vec![uni(&[4, 5, 3], rng), uni(&[9, 6], rng)],
            build: |g, ids| {
                let y = g.rel_logits_q(ids[0], ids[1], 2)?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: RelLogitsK,
            make_leaves: |rng| alloc::vec![uni(&[4, 5, 3], rng), uni(&[9, 6], rng)],
            build: |g, ids| {
                let y = g.rel_logits_k(ids[0], ids[1], 2)?;
                weighted_sum(g, y)
            },
        },
        PrimitiveCase {
            kind: RelValues,
            make_leaves: |rng| alloc::vec![uni(&[4, 5, 5], rng), uni(&[9, 6], rng)],
            build: |g, ids| {
                let y = g.rel_values(ids[0], ids[1], 2)?;
                weighted_sum(g, y)
            },
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_every_primitive_kind_exactly_once() {
        let cases = primitive_cases();
        assert_eq!(cases.len(), OpKind::ALL.len());
        for (case, &kind) in cases.iter().zip(OpKind::ALL.iter()) {
            assert_eq!(case.kind, kind);
        }
    }

    #[test]
    fn quadratic_loss_is_exact_for_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let out = grad_check(
            &[x],
            |g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                g.sum_all(sq)
            },
            &GradCheckOptions {
                eps: 1e-5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.max_rel_err < 1e-9, "rel err {}", out.max_rel_err);
    }

    #[test]
    fn sign_fault_in_backward_flips_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = away_from_zero(&[4, 4], &mut rng);

        let mut g = Graph::<f64>::new();
        let id = g.leaf(x.clone(), true);
        let y = g.relu(id).unwrap();
        let loss = g.sum_all(y).unwrap();
        g.inject_backward_fault(OpKind::Relu);
        g.backward(loss).unwrap();
        let faulty = g.take_grad(id).unwrap();

        // d(sum relu)/dx is +1 where x > 0; the fault makes it -1 there.
        for (&xv, &gv) in x.data().iter().zip(faulty.iter()) {
            if xv > 0.0 {
                assert_eq!(gv, -1.0);
            }
        }
    }
}
