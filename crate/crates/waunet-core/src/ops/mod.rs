//! Primitive ops: forward kernels, shape rules, and backward rules.
//!
//! Builder methods live on [`crate::graph::Graph`]; each appends one node.
//! `op_backward` is the single dispatch point for the reverse sweep.

use alloc::vec::Vec;

use crate::graph::{Node, OpRecord, VarId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod reduce;
mod relpos;
mod shape_ops;

/// Identifier of a primitive op kind. One entry per backward rule; the
/// gradient-check suite must cover every one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Mul,
    ScalarMul,
    Relu,
    BiasAddChan,
    Matmul,
    Bmm,
    BmmNt,
    Permute,
    Reshape,
    Concat,
    SumAll,
    MeanAll,
    Softmax,
    Conv2d,
    MaxPool2x2,
    Deconv2d,
    BatchNorm2d,
    CrossEntropy,
    RelLogitsQ,
    RelLogitsK,
    RelValues,
}

impl OpKind {
    pub const ALL: [OpKind; 22] = [
        OpKind::Add,
        OpKind::Mul,
        OpKind::ScalarMul,
        OpKind::Relu,
        OpKind::BiasAddChan,
        OpKind::Matmul,
        OpKind::Bmm,
        OpKind::BmmNt,
        OpKind::Permute,
        OpKind::Reshape,
        OpKind::Concat,
        OpKind::SumAll,
        OpKind::MeanAll,
        OpKind::Softmax,
        OpKind::Conv2d,
        OpKind::MaxPool2x2,
        OpKind::Deconv2d,
        OpKind::BatchNorm2d,
        OpKind::CrossEntropy,
        OpKind::RelLogitsQ,
        OpKind::RelLogitsK,
        OpKind::RelValues,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::ScalarMul => "scalar_mul",
            OpKind::Relu => "relu",
            OpKind::BiasAddChan => "bias_add_chan",
            OpKind::Matmul => "matmul",
            OpKind::Bmm => "bmm",
            OpKind::BmmNt => "bmm_nt",
            OpKind::Permute => "permute",
            OpKind::Reshape => "reshape",
            OpKind::Concat => "concat",
            OpKind::SumAll => "sum_all",
            OpKind::MeanAll => "mean_all",
            OpKind::Softmax => "softmax",
            OpKind::Conv2d => "conv2d",
            OpKind::MaxPool2x2 => "maxpool2x2",
            OpKind::Deconv2d => "deconv2d",
            OpKind::BatchNorm2d => "batch_norm2d",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::RelLogitsQ => "rel_logits_q",
            OpKind::RelLogitsK => "rel_logits_k",
            OpKind::RelValues => "rel_values",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Op record payload: the kind plus whatever the backward rule needs beyond
/// the input and output tensors themselves.
pub(crate) enum Op<T> {
    Add,
    Mul,
    ScalarMul { factor: T },
    Relu,
    BiasAddChan,
    Matmul,
    Bmm,
    BmmNt,
    Permute { axes: Vec<usize> },
    Reshape,
    Concat { axis: usize },
    SumAll,
    MeanAll,
    Softmax { axis: usize },
    Conv2d { stride: usize, pad: usize },
    MaxPool2x2 { argmax: Vec<u32> },
    Deconv2d,
    BatchNorm2d { mean: Vec<T>, inv_std: Vec<T> },
    CrossEntropy { labels: Vec<u32>, probs: Vec<T> },
    RelLogitsQ { heads: usize },
    RelLogitsK { heads: usize },
    RelValues { heads: usize },
}

impl<T> Op<T> {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Add => OpKind::Add,
            Op::Mul => OpKind::Mul,
            Op::ScalarMul { .. } => OpKind::ScalarMul,
            Op::Relu => OpKind::Relu,
            Op::BiasAddChan => OpKind::BiasAddChan,
            Op::Matmul => OpKind::Matmul,
            Op::Bmm => OpKind::Bmm,
            Op::BmmNt => OpKind::BmmNt,
            Op::Permute { .. } => OpKind::Permute,
            Op::Reshape => OpKind::Reshape,
            Op::Concat { .. } => OpKind::Concat,
            Op::SumAll => OpKind::SumAll,
            Op::MeanAll => OpKind::MeanAll,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2x2 { .. } => OpKind::MaxPool2x2,
            Op::Deconv2d => OpKind::Deconv2d,
            Op::BatchNorm2d { .. } => OpKind::BatchNorm2d,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::RelLogitsQ { .. } => OpKind::RelLogitsQ,
            Op::RelLogitsK { .. } => OpKind::RelLogitsK,
            Op::RelValues { .. } => OpKind::RelValues,
        }
    }
}

/// Computes the gradient contributions an op sends to its inputs.
///
/// Returns `(input, contribution)` pairs; the caller accumulates them. Inputs
/// that do not need gradients are skipped here so dead subgraphs cost nothing.
pub(crate) fn op_backward<T: Scalar>(
    nodes: &[Node<T>],
    rec: &OpRecord<T>,
    out_value: &Tensor<T>,
    out_grad: &[T],
) -> Vec<(VarId, Vec<T>)> {
    let val = |id: VarId| &nodes[id.0].value;
    let needs = |id: VarId| nodes[id.0].needs_grad;
    let ins = &rec.inputs;

    match &rec.op {
        Op::Add => elementwise::add_backward(out_grad, ins, &needs),
        Op::Mul => elementwise::mul_backward(val(ins[0]), val(ins[1]), out_grad, ins, &needs),
        Op::ScalarMul { factor } => {
            elementwise::scalar_mul_backward(*factor, out_grad, ins, &needs)
        }
        Op::Relu => elementwise::relu_backward(val(ins[0]), out_grad, ins, &needs),
        Op::BiasAddChan => {
            elementwise::bias_add_backward(val(ins[0]).shape(), out_grad, ins, &needs)
        }
        Op::Matmul => linalg::matmul_backward(val(ins[0]), val(ins[1]), out_grad, ins, &needs),
        Op::Bmm => linalg::bmm_backward(val(ins[0]), val(ins[1]), out_grad, ins, &needs),
        Op::BmmNt => linalg::bmm_nt_backward(val(ins[0]), val(ins[1]), out_grad, ins, &needs),
        Op::Permute { axes } => {
            shape_ops::permute_backward(val(ins[0]).shape(), axes, out_grad, ins, &needs)
        }
        Op::Reshape => shape_ops::reshape_backward(out_grad, ins, &needs),
        Op::Concat { axis } => {
            let in_shapes: Vec<&[usize]> = ins.iter().map(|&id| val(id).shape()).collect();
            shape_ops::concat_backward(&in_shapes, *axis, out_value.shape(), out_grad, ins, &needs)
        }
        Op::SumAll => reduce::sum_all_backward(val(ins[0]).numel(), out_grad, ins, &needs),
        Op::MeanAll => reduce::mean_all_backward(val(ins[0]).numel(), out_grad, ins, &needs),
        Op::Softmax { axis } => reduce::softmax_backward(out_value, *axis, out_grad, ins, &needs),
        Op::Conv2d { stride, pad } => conv::conv2d_backward(
            val(ins[0]),
            val(ins[1]),
            *stride,
            *pad,
            out_value.shape(),
            out_grad,
            ins,
            &needs,
        ),
        Op::MaxPool2x2 { argmax } => {
            conv::maxpool_backward(val(ins[0]).numel(), argmax, out_grad, ins, &needs)
        }
        Op::Deconv2d => conv::deconv2d_backward(
            val(ins[0]),
            val(ins[1]),
            out_value.shape(),
            out_grad,
            ins,
            &needs,
        ),
        Op::BatchNorm2d { mean, inv_std } => norm::batch_norm_backward(
            val(ins[0]),
            val(ins[1]),
            mean,
            inv_std,
            out_grad,
            ins,
            &needs,
        ),
        Op::CrossEntropy { labels, probs } => {
            loss::cross_entropy_backward(val(ins[0]).shape(), labels, probs, out_grad, ins, &needs)
        }
        Op::RelLogitsQ { heads } => relpos::rel_logits_q_backward(
            val(ins[0]),
            val(ins[1]),
            *heads,
            out_grad,
            ins,
            &needs,
        ),
        Op::RelLogitsK { heads } => relpos::rel_logits_k_backward(
            val(ins[0]),
            val(ins[1]),
            *heads,
            out_grad,
            ins,
            &needs,
        ),
        Op::RelValues { heads } => relpos::rel_values_backward(
            val(ins[0]),
            val(ins[1]),
            *heads,
            out_grad,
            ins,
            &needs,
        ),
    }
}
