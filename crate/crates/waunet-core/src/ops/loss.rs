//! Pixel-wise cross-entropy over class logits.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::ops::Op;
use crate::scalar::{lit, Scalar};
use crate::tensor::{shape_string, Tensor};

impl<T: Scalar> Graph<T> {
    /// Mean over all `N*H*W` pixels of `-log softmax(logits)[label]`.
    ///
    /// `logits` is `[N,K,H,W]`; `labels` is row-major `[N,H,W]` with class
    /// ids in `[0, K)`. Out-of-range ids are rejected up front.
    pub fn cross_entropy(&mut self, logits: VarId, labels: &[u32]) -> Result<VarId> {
        self.check_id(logits)?;
        let tl = self.value(logits);
        if tl.rank() != 4 {
            return Err(Error::Shape(format!(
                "cross_entropy: logits must be [N,K,H,W], got {}",
                shape_string(tl.shape())
            )));
        }
        let (n, k, h, w) = (tl.shape()[0], tl.shape()[1], tl.shape()[2], tl.shape()[3]);
        if labels.len() != n * h * w {
            return Err(Error::Shape(format!(
                "cross_entropy: expected {} labels, got {}",
                n * h * w,
                labels.len()
            )));
        }
        for (i, &c) in labels.iter().enumerate() {
            if c as usize >= k {
                return Err(Error::Label {
                    index: i,
                    class: c,
                    num_classes: k,
                });
            }
        }

        let xd = tl.data();
        let plane = h * w;
        let mut probs = vec![T::zero(); xd.len()];
        let mut total = T::zero();
        for ni in 0..n {
            for p in 0..plane {
                let base = ni * k * plane + p;
                let mut max = xd[base];
                for c in 1..k {
                    let v = xd[base + c * plane];
                    if v > max {
                        max = v;
                    }
                }
                if !max.is_finite() {
                    return Err(Error::Numeric("cross_entropy: non-finite logit".into()));
                }
                let mut sum = T::zero();
                for c in 0..k {
                    let e = (xd[base + c * plane] - max).exp();
                    probs[base + c * plane] = e;
                    sum += e;
                }
                let lse = max + sum.ln();
                for c in 0..k {
                    probs[base + c * plane] /= sum;
                }
                let label = labels[ni * plane + p] as usize;
                total += lse - xd[base + label * plane];
            }
        }
        let loss = total / lit::<T>((n * plane) as f64);
        Ok(self.push_op(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                labels: labels.to_vec(),
                probs,
            },
            vec![logits],
        ))
    }
}

/// dlogits = (softmax - one_hot(label)) / (N*H*W)
pub(crate) fn cross_entropy_backward<T: Scalar>(
    logits_shape: &[usize],
    labels: &[u32],
    probs: &[T],
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    if !needs(ins[0]) {
        return Vec::new();
    }
    let (n, k, h, w) = (
        logits_shape[0],
        logits_shape[1],
        logits_shape[2],
        logits_shape[3],
    );
    let plane = h * w;
    let scale = out_grad[0] / lit::<T>((n * plane) as f64);
    let mut dx = vec![T::zero(); probs.len()];
    for ni in 0..n {
        for p in 0..plane {
            let base = ni * k * plane + p;
            let label = labels[ni * plane + p] as usize;
            for c in 0..k {
                let target = if c == label { T::one() } else { T::zero() };
                dx[base + c * plane] = (probs[base + c * plane] - target) * scale;
            }
        }
    }
    vec![(ins[0], dx)]
}
