//! Reductions and softmax.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::ops::Op;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: VarId) -> Result<VarId> {
        self.check_id(x)?;
        let mut acc = T::zero();
        for &v in self.value(x).data() {
            acc += v;
        }
        Ok(self.push_op(Tensor::scalar(acc), Op::SumAll, vec![x]))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean_all(&mut self, x: VarId) -> Result<VarId> {
        self.check_id(x)?;
        let n = self.value(x).numel();
        let mut acc = T::zero();
        for &v in self.value(x).data() {
            acc += v;
        }
        let mean = acc / lit::<T>(n as f64);
        Ok(self.push_op(Tensor::scalar(mean), Op::MeanAll, vec![x]))
    }

    /// Softmax along `axis`, stabilized by max subtraction. Slices sum to 1;
    /// non-finite inputs are reported as numeric errors.
    pub fn softmax(&mut self, x: VarId, axis: usize) -> Result<VarId> {
        self.check_id(x)?;
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::Shape(format!(
                "softmax: axis {axis} out of range for rank {}",
                tx.rank()
            )));
        }
        let shape = tx.shape().to_vec();
        let data = softmax_forward(tx.data(), &shape, axis)?;
        let out = Tensor::from_vec(shape, data)?;
        Ok(self.push_op(out, Op::Softmax { axis }, vec![x]))
    }
}

/// Iterates the (outer, inner) decomposition of a shape around `axis` and
/// applies `f` to each 1D slice along the axis.
fn for_each_axis_slice<T: Scalar>(
    data_len: usize,
    shape: &[usize],
    axis: usize,
    mut f: impl FnMut(usize, usize) -> Result<()>,
) -> Result<()> {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer = data_len / (axis_len * inner);
    for o in 0..outer {
        for i in 0..inner {
            f(o * axis_len * inner + i, inner)?;
        }
    }
    Ok(())
}

pub(crate) fn softmax_forward<T: Scalar>(
    x: &[T],
    shape: &[usize],
    axis: usize,
) -> Result<Vec<T>> {
    let axis_len = shape[axis];
    let mut out = vec![T::zero(); x.len()];
    for_each_axis_slice::<T>(x.len(), shape, axis, |base, stride| {
        let mut max = x[base];
        for a in 1..axis_len {
            let v = x[base + a * stride];
            if v > max {
                max = v;
            }
        }
        if !max.is_finite() {
            return Err(Error::Numeric("softmax input is not finite".into()));
        }
        let mut sum = T::zero();
        for a in 0..axis_len {
            let e = (x[base + a * stride] - max).exp();
            out[base + a * stride] = e;
            sum += e;
        }
        if !sum.is_finite() || sum <= T::zero() {
            return Err(Error::Numeric("softmax normalization is not finite".into()));
        }
        for a in 0..axis_len {
            out[base + a * stride] /= sum;
        }
        Ok(())
    })?;
    Ok(out)
}

pub(crate) fn sum_all_backward<T: Scalar>(
    numel: usize,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    if !needs(ins[0]) {
        return Vec::new();
    }
    vec![(ins[0], vec![out_grad[0]; numel])]
}

pub(crate) fn mean_all_backward<T: Scalar>(
    numel: usize,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    if !needs(ins[0]) {
        return Vec::new();
    }
    let g = out_grad[0] / lit::<T>(numel as f64);
    vec![(ins[0], vec![g; numel])]
}

/// dx = y * (g - sum_axis(g * y))
pub(crate) fn softmax_backward<T: Scalar>(
    y: &Tensor<T>,
    axis: usize,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    if !needs(ins[0]) {
        return Vec::new();
    }
    let shape = y.shape();
    let axis_len = shape[axis];
    let yd = y.data();
    let mut dx = vec![T::zero(); yd.len()];
    for_each_axis_slice::<T>(yd.len(), shape, axis, |base, stride| {
        let mut dot = T::zero();
        for a in 0..axis_len {
            let i = base + a * stride;
            dot += out_grad[i] * yd[i];
        }
        for a in 0..axis_len {
            let i = base + a * stride;
            dx[i] = yd[i] * (out_grad[i] - dot);
        }
        Ok(())
    })
    .expect("softmax backward cannot fail");
    vec![(ins[0], dx)]
}
