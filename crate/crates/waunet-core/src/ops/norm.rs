//! Per-channel batch normalization (batch statistics, optional in CNN blocks).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::ops::Op;
use crate::scalar::{lit, Scalar};
use crate::tensor::{shape_string, Tensor};

impl<T: Scalar> Graph<T> {
    /// `y = gamma * (x - mean_c) / sqrt(var_c + eps) + beta` with moments
    /// taken over `(N,H,W)` per channel of the current batch.
    pub fn batch_norm2d(&mut self, x: VarId, gamma: VarId, beta: VarId, eps: T) -> Result<VarId> {
        self.check_id(x)?;
        self.check_id(gamma)?;
        self.check_id(beta)?;
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.rank() != 4 {
            return Err(Error::Shape(format!(
                "batch_norm2d: expected [N,C,H,W], got {}",
                shape_string(tx.shape())
            )));
        }
        let c = tx.shape()[1];
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(Error::Shape(format!(
                "batch_norm2d: gamma/beta must be [{c}], got {} and {}",
                shape_string(tg.shape()),
                shape_string(tb.shape())
            )));
        }
        let (n, h, w) = (tx.shape()[0], tx.shape()[2], tx.shape()[3]);
        let plane = h * w;
        let m = lit::<T>((n * plane) as f64);
        let xd = tx.data();

        let mut mean = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        let mut data = vec![T::zero(); xd.len()];
        for ci in 0..c {
            let mut sum = T::zero();
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for &v in &xd[base..base + plane] {
                    sum += v;
                }
            }
            let mu = sum / m;
            let mut var = T::zero();
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for &v in &xd[base..base + plane] {
                    let d = v - mu;
                    var += d * d;
                }
            }
            var /= m;
            let inv = (var + eps).sqrt().recip();
            mean[ci] = mu;
            inv_std[ci] = inv;
            let (g, b) = (tg.data()[ci], tb.data()[ci]);
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for i in base..base + plane {
                    data[i] = g * (xd[i] - mu) * inv + b;
                }
            }
        }
        let out = Tensor::from_vec(tx.shape().to_vec(), data)?;
        Ok(self.push_op(
            out,
            Op::BatchNorm2d { mean, inv_std },
            vec![x, gamma, beta],
        ))
    }
}

pub(crate) fn batch_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let plane = h * w;
    let m = lit::<T>((n * plane) as f64);
    let xd = x.data();
    let need_dx = needs(ins[0]);
    let need_dg = needs(ins[1]);
    let need_db = needs(ins[2]);

    let mut dx = if need_dx { vec![T::zero(); xd.len()] } else { Vec::new() };
    let mut dg = if need_dg { vec![T::zero(); c] } else { Vec::new() };
    let mut db = if need_db { vec![T::zero(); c] } else { Vec::new() };

    for ci in 0..c {
        let (mu, inv) = (mean[ci], inv_std[ci]);
        let g = gamma.data()[ci];
        // sums over the channel: sum(dy), sum(dy * xhat)
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in base..base + plane {
                let xhat = (xd[i] - mu) * inv;
                sum_dy += out_grad[i];
                sum_dy_xhat += out_grad[i] * xhat;
            }
        }
        if need_dg {
            dg[ci] = sum_dy_xhat;
        }
        if need_db {
            db[ci] = sum_dy;
        }
        if need_dx {
            // dx = gamma*inv/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
            let scale = g * inv / m;
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for i in base..base + plane {
                    let xhat = (xd[i] - mu) * inv;
                    dx[i] = scale * (m * out_grad[i] - sum_dy - xhat * sum_dy_xhat);
                }
            }
        }
    }
    let mut res = Vec::new();
    if need_dx {
        res.push((ins[0], dx));
    }
    if need_dg {
        res.push((ins[1], dg));
    }
    if need_db {
        res.push((ins[2], db));
    }
    res
}
