//! Layout primitives: permute, reshape, concat.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::{numel_of, shape_string, Tensor};

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Copies `src` (shape `in_shape`) into the axis order given by `axes`.
pub(crate) fn permute_copy<T: Scalar>(src: &[T], in_shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = in_shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = row_major_strides(in_shape);
    // Stride to advance in the source when the d-th output coordinate ticks.
    let map_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = numel_of(&out_shape);
    let mut out = Vec::with_capacity(n);
    let mut coords = vec![0usize; rank];
    let mut src_idx = 0usize;
    for _ in 0..n {
        out.push(src[src_idx]);
        // odometer increment over the output coordinates
        for d in (0..rank).rev() {
            coords[d] += 1;
            src_idx += map_strides[d];
            if coords[d] < out_shape[d] {
                break;
            }
            src_idx -= map_strides[d] * out_shape[d];
            coords[d] = 0;
        }
    }
    out
}

fn invert_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (d, &a) in axes.iter().enumerate() {
        inv[a] = d;
    }
    inv
}

impl<T: Scalar> Graph<T> {
    /// Reorders axes; `axes` must be a permutation of `0..rank`.
    pub fn permute(&mut self, x: VarId, axes: &[usize]) -> Result<VarId> {
        self.check_id(x)?;
        let tx = self.value(x);
        let rank = tx.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || core::mem::replace(&mut seen[a], true)) {
            return Err(Error::Shape(format!(
                "permute: axes {axes:?} is not a permutation of 0..{rank}"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| tx.shape()[a]).collect();
        let data = permute_copy(tx.data(), tx.shape(), axes);
        let out = Tensor::from_vec(out_shape, data)?;
        Ok(self.push_op(out, Op::Permute { axes: axes.to_vec() }, vec![x]))
    }

    /// Swaps the last two axes; convenience over [`Graph::permute`].
    pub fn transpose_last2(&mut self, x: VarId) -> Result<VarId> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return Err(Error::Shape("transpose needs rank >= 2".into()));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    /// Reinterprets the row-major data under a new shape of equal size.
    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId> {
        self.check_id(x)?;
        let tx = self.value(x);
        if numel_of(shape) != tx.numel() || shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!(
                "reshape: {} -> {}",
                shape_string(tx.shape()),
                shape_string(shape)
            )));
        }
        let out = Tensor::from_vec(shape.to_vec(), tx.data().to_vec())?;
        Ok(self.push_op(out, Op::Reshape, vec![x]))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[VarId], axis: usize) -> Result<VarId> {
        if xs.is_empty() {
            return Err(Error::Usage("concat of zero tensors".into()));
        }
        for &id in xs {
            self.check_id(id)?;
        }
        let first = self.value(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::Shape(format!(
                "concat: axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0usize;
        for &id in xs {
            let s = self.value(id).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(first.iter())
                    .enumerate()
                    .any(|(d, (&a, &b))| d != axis && a != b)
            {
                return Err(Error::Shape(format!(
                    "concat: incompatible shapes {} vs {}",
                    shape_string(&first),
                    shape_string(s)
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();

        let mut data = vec![T::zero(); numel_of(&out_shape)];
        let out_row = axis_total * inner;
        let mut offset = 0usize;
        for &id in xs {
            let t = self.value(id);
            let len = t.shape()[axis] * inner;
            for o in 0..outer {
                let dst = o * out_row + offset;
                data[dst..dst + len].copy_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
            offset += len;
        }
        let out = Tensor::from_vec(out_shape, data)?;
        Ok(self.push_op(out, Op::Concat { axis }, xs.to_vec()))
    }
}

pub(crate) fn permute_backward<T: Scalar>(
    in_shape: &[usize],
    axes: &[usize],
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    if !needs(ins[0]) {
        return Vec::new();
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let inv = invert_axes(axes);
    vec![(ins[0], permute_copy(out_grad, &out_shape, &inv))]
}

pub(crate) fn reshape_backward<T: Scalar>(
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    if !needs(ins[0]) {
        return Vec::new();
    }
    vec![(ins[0], out_grad.to_vec())]
}

pub(crate) fn concat_backward<T: Scalar>(
    in_shapes: &[&[usize]],
    axis: usize,
    out_shape: &[usize],
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let out_row = out_shape[axis] * inner;

    let mut res = Vec::new();
    let mut offset = 0usize;
    for (idx, &id) in ins.iter().enumerate() {
        let len = in_shapes[idx][axis] * inner;
        if needs(id) {
            let mut d = vec![T::zero(); numel_of(in_shapes[idx])];
            for o in 0..outer {
                let src = o * out_row + offset;
                d[o * len..(o + 1) * len].copy_from_slice(&out_grad[src..src + len]);
            }
            res.push((id, d));
        }
        offset += len;
    }
    res
}
