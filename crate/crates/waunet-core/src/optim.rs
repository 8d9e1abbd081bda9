//! Adam and the polynomial learning-rate schedule.

use alloc::format;
use num_traits::Float;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// `lr0 * (1 - step/total_steps)^power`; reaches exactly 0 at the final step.
pub fn poly_lr(step: u64, total_steps: u64, lr0: f64, power: f64) -> f64 {
    debug_assert!(step <= total_steps);
    let frac = 1.0 - step as f64 / total_steps as f64;
    lr0 * frac.powf(power)
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, aligned with a store's entry order.
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let m = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let v = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState { m, v, step: 0 }
    }
}

/// One Adam update with bias correction.
///
/// `grads[i]` pairs with the i-th store entry; `None` skips that parameter
/// (frozen or absent from the step's graph). Non-finite gradients abort with
/// the parameter's name.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Option<Vec<T>>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::Usage(format!(
            "adam_step: {} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step;
    let b1 = lit::<T>(cfg.beta1);
    let b2 = lit::<T>(cfg.beta2);
    let one = T::one();
    let bias1 = lit::<T>(1.0 - cfg.beta1.powi(t as i32));
    let bias2 = lit::<T>(1.0 - cfg.beta2.powi(t as i32));
    let eps = lit::<T>(cfg.eps);
    let lr_t = lit::<T>(lr);

    for (i, (name, tensor)) in store.iter_mut().enumerate() {
        let Some(grad) = &grads[i] else { continue };
        if grad.len() != tensor.numel() {
            return Err(Error::Shape(format!(
                "adam_step: gradient length {} for parameter {name} of {} elements",
                grad.len(),
                tensor.numel()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter {name}"
            )));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = tensor.data_mut();
        for j in 0..p.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Option<Vec<T>>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter().flatten() {
        for &v in g {
            let v = v.as_f64();
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = lit::<T>(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
