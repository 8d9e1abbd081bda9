//! Desk-scale CPU engine for 2D multi-organ semantic segmentation.
//!
//! The crate is `no_std` (alloc only) and holds the pure computational parts:
//!
//! * [`tensor`] / [`graph`] / [`ops`] — dense tensors and a tape-based
//!   reverse-mode autodiff engine with the primitive kernels needed by the
//!   network (convolution family, softmax, attention logits, losses, ...).
//! * [`attention`] — multi-head axial self-attention with relative positional
//!   encodings, a full quadratic self-attention reference, and analytic
//!   multiply counts for both.
//! * [`net`] — the weaving-attention U-net: a nested grid of CNN blocks with
//!   dense skip fusion and per-level axial attention blocks.
//! * [`metrics`] — DSC, HD95 and MSD over label maps with physical spacing.
//! * [`phantom`] — a synthetic multi-organ phantom generator plus the
//!   center-crop and augmentation pipeline.
//! * [`optim`] — Adam and the polynomial learning-rate schedule.
//! * [`gradcheck`] — central-difference gradient checking for every primitive
//!   and for whole networks.
//!
//! File formats, checkpoints, training orchestration and the CLI live in the
//! companion `waunet` crate.
//!
//! # Concurrency
//!
//! A [`graph::Graph`] is confined to one logical execution context while a
//! forward/backward pass is in flight; tensors and finished graphs are `Send`.
//! All kernels are pure functions of their inputs and run sequentially, so
//! results never depend on thread count.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod attention;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod optim;
pub mod params;
pub mod phantom;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, VarId};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
