//! Dense row-major tensor value type.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// An n-dimensional array of scalars in row-major order.
///
/// `Tensor` is a plain value; gradient tracking happens when a tensor is
/// placed on a [`crate::graph::Graph`] as a leaf or produced by an op.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn shape_string(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(|e| format!("{e}")).collect();
    format!("[{}]", parts.join("x"))
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, checking that the data length matches the shape.
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!(
                "zero extent in shape {}",
                shape_string(&shape)
            )));
        }
        if numel_of(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {} expects {} elements, got {}",
                shape_string(&shape),
                numel_of(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel_of(shape)],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel_of(shape)],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Uniform draws in `[lo, hi)`. Values are sampled at `f64` and then cast,
    /// so the stream of draws does not depend on `T`.
    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = numel_of(shape);
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(lit::<T>(rng.gen_range(lo..hi)));
        }
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Element access for 4D tensors, used heavily by tests.
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        debug_assert_eq!(self.rank(), 4);
        let (cn, hn, wn) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cn + c) * hn + h) * wn + w]
    }

    /// Casts every element through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of_f64(x.as_f64())).collect(),
        }
    }

    pub fn iter(&self) -> core::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
