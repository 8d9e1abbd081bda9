//! Dense matrix products: 2D matmul and batched variants.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::{shape_string, Tensor};

/// `c[m,n] += a[m,k] * b[k,n]`, ikj order so the inner loop runs over
/// contiguous rows of `b` and `c`.
pub(crate) fn matmul_accum<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T` (dot products of rows).
pub(crate) fn matmul_nt_accum<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`.
pub(crate) fn matmul_tn_accum<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += av * bv;
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// 2D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Shape(format!(
                "matmul: {} x {}",
                shape_string(ta.shape()),
                shape_string(tb.shape())
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![T::zero(); m * n];
        matmul_accum(ta.data(), tb.data(), &mut data, m, k, n);
        let out = Tensor::from_vec(vec![m, n], data)?;
        Ok(self.push_op(out, Op::Matmul, vec![a, b]))
    }

    /// Batched matmul `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 3
            || tb.rank() != 3
            || ta.shape()[0] != tb.shape()[0]
            || ta.shape()[2] != tb.shape()[1]
        {
            return Err(Error::Shape(format!(
                "bmm: {} x {}",
                shape_string(ta.shape()),
                shape_string(tb.shape())
            )));
        }
        let (bs, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
        let mut data = vec![T::zero(); bs * m * n];
        for bi in 0..bs {
            matmul_accum(
                &ta.data()[bi * m * k..(bi + 1) * m * k],
                &tb.data()[bi * k * n..(bi + 1) * k * n],
                &mut data[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::from_vec(vec![bs, m, n], data)?;
        Ok(self.push_op(out, Op::Bmm, vec![a, b]))
    }

    /// Batched matmul with the second operand transposed:
    /// `[B,m,k] x [B,n,k] -> [B,m,n]`.
    pub fn bmm_nt(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 3
            || tb.rank() != 3
            || ta.shape()[0] != tb.shape()[0]
            || ta.shape()[2] != tb.shape()[2]
        {
            return Err(Error::Shape(format!(
                "bmm_nt: {} x {}",
                shape_string(ta.shape()),
                shape_string(tb.shape())
            )));
        }
        let (bs, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[1]);
        let mut data = vec![T::zero(); bs * m * n];
        for bi in 0..bs {
            matmul_nt_accum(
                &ta.data()[bi * m * k..(bi + 1) * m * k],
                &tb.data()[bi * n * k..(bi + 1) * n * k],
                &mut data[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::from_vec(vec![bs, m, n], data)?;
        Ok(self.push_op(out, Op::BmmNt, vec![a, b]))
    }
}

pub(crate) fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut res = Vec::new();
    if needs(ins[0]) {
        // dA = G * B^T
        let mut da = vec![T::zero(); m * k];
        matmul_nt_accum(out_grad, b.data(), &mut da, m, n, k);
        res.push((ins[0], da));
    }
    if needs(ins[1]) {
        // dB = A^T * G
        let mut db = vec![T::zero(); k * n];
        matmul_tn_accum(a.data(), out_grad, &mut db, m, k, n);
        res.push((ins[1], db));
    }
    res
}

pub(crate) fn bmm_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let mut res = Vec::new();
    if needs(ins[0]) {
        let mut da = vec![T::zero(); bs * m * k];
        for bi in 0..bs {
            matmul_nt_accum(
                &out_grad[bi * m * n..(bi + 1) * m * n],
                &b.data()[bi * k * n..(bi + 1) * k * n],
                &mut da[bi * m * k..(bi + 1) * m * k],
                m,
                n,
                k,
            );
        }
        res.push((ins[0], da));
    }
    if needs(ins[1]) {
        let mut db = vec![T::zero(); bs * k * n];
        for bi in 0..bs {
            matmul_tn_accum(
                &a.data()[bi * m * k..(bi + 1) * m * k],
                &out_grad[bi * m * n..(bi + 1) * m * n],
                &mut db[bi * k * n..(bi + 1) * k * n],
                m,
                k,
                n,
            );
        }
        res.push((ins[1], db));
    }
    res
}

pub(crate) fn bmm_nt_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[1]);
    let mut res = Vec::new();
    if needs(ins[0]) {
        // dA[b] = G[b] * B[b]   ([m,n] x [n,k])
        let mut da = vec![T::zero(); bs * m * k];
        for bi in 0..bs {
            matmul_accum(
                &out_grad[bi * m * n..(bi + 1) * m * n],
                &b.data()[bi * n * k..(bi + 1) * n * k],
                &mut da[bi * m * k..(bi + 1) * m * k],
                m,
                n,
                k,
            );
        }
        res.push((ins[0], da));
    }
    if needs(ins[1]) {
        // dB[b] = G[b]^T * A[b]  ([n,m] x [m,k])
        let mut db = vec![T::zero(); bs * n * k];
        for bi in 0..bs {
            matmul_tn_accum(
                &out_grad[bi * m * n..(bi + 1) * m * n],
                &a.data()[bi * m * k..(bi + 1) * m * k],
                &mut db[bi * n * k..(bi + 1) * n * k],
                m,
                n,
                k,
            );
        }
        res.push((ins[1], db));
    }
    res
}
