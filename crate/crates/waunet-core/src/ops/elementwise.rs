//! Elementwise primitives: add, mul, scalar multiply, relu, channel bias.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::{shape_string, Tensor};

impl<T: Scalar> Graph<T> {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "add: {} vs {}",
                shape_string(ta.shape()),
                shape_string(tb.shape())
            )));
        }
        let data: Vec<T> = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(ta.shape().to_vec(), data)?;
        Ok(self.push_op(out, Op::Add, vec![a, b]))
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "mul: {} vs {}",
                shape_string(ta.shape()),
                shape_string(tb.shape())
            )));
        }
        let data: Vec<T> = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(ta.shape().to_vec(), data)?;
        Ok(self.push_op(out, Op::Mul, vec![a, b]))
    }

    pub fn scalar_mul(&mut self, a: VarId, factor: T) -> Result<VarId> {
        self.check_id(a)?;
        let ta = self.value(a);
        let data: Vec<T> = ta.data().iter().map(|&x| x * factor).collect();
        let out = Tensor::from_vec(ta.shape().to_vec(), data)?;
        Ok(self.push_op(out, Op::ScalarMul { factor }, vec![a]))
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        self.check_id(a)?;
        let ta = self.value(a);
        let shape = ta.shape().to_vec();
        let mut mask = 0u64;
        let mut data = Vec::with_capacity(ta.numel());
        for (i, &x) in ta.data().iter().enumerate() {
            let on = x > T::zero();
            data.push(if on { x } else { T::zero() });
            mask = mask.rotate_left(1) ^ ((on as u64) << (i % 63));
        }
        self.note_branch(mask);
        let out = Tensor::from_vec(shape, data)?;
        Ok(self.push_op(out, Op::Relu, vec![a]))
    }

    /// Adds a per-channel bias to an `[N,C,H,W]` tensor.
    pub fn bias_add_chan(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        self.check_id(x)?;
        self.check_id(bias)?;
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.rank() != 4 || tb.rank() != 1 || tb.shape()[0] != tx.shape()[1] {
            return Err(Error::Shape(format!(
                "bias_add_chan: x {} bias {}",
                shape_string(tx.shape()),
                shape_string(tb.shape())
            )));
        }
        let (n, c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let plane = h * w;
        let mut data = tx.data().to_vec();
        for ni in 0..n {
            for ci in 0..c {
                let b = tb.data()[ci];
                let base = (ni * c + ci) * plane;
                for v in &mut data[base..base + plane] {
                    *v += b;
                }
            }
        }
        let out = Tensor::from_vec(tx.shape().to_vec(), data)?;
        Ok(self.push_op(out, Op::BiasAddChan, vec![x, bias]))
    }
}

pub(crate) fn add_backward<T: Scalar>(
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let mut res = Vec::new();
    for &id in ins {
        if needs(id) {
            res.push((id, out_grad.to_vec()));
        }
    }
    res
}

pub(crate) fn mul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let mut res = Vec::new();
    if needs(ins[0]) {
        let da: Vec<T> = out_grad
            .iter()
            .zip(b.data().iter())
            .map(|(&g, &y)| g * y)
            .collect();
        res.push((ins[0], da));
    }
    if needs(ins[1]) {
        let db: Vec<T> = out_grad
            .iter()
            .zip(a.data().iter())
            .map(|(&g, &x)| g * x)
            .collect();
        res.push((ins[1], db));
    }
    res
}

pub(crate) fn scalar_mul_backward<T: Scalar>(
    factor: T,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    if !needs(ins[0]) {
        return Vec::new();
    }
    vec![(ins[0], out_grad.iter().map(|&g| g * factor).collect())]
}

pub(crate) fn relu_backward<T: Scalar>(
    x: &Tensor<T>,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    if !needs(ins[0]) {
        return Vec::new();
    }
    let dx: Vec<T> = x
        .data()
        .iter()
        .zip(out_grad.iter())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    vec![(ins[0], dx)]
}

pub(crate) fn bias_add_backward<T: Scalar>(
    x_shape: &[usize],
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let mut res = Vec::new();
    if needs(ins[0]) {
        res.push((ins[0], out_grad.to_vec()));
    }
    if needs(ins[1]) {
        let (n, c, plane) = (x_shape[0], x_shape[1], x_shape[2] * x_shape[3]);
        let mut db = vec![T::zero(); c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                let mut acc = T::zero();
                for &g in &out_grad[base..base + plane] {
                    acc += g;
                }
                db[ci] += acc;
            }
        }
        res.push((ins[1], db));
    }
    res
}
