//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every tensor produced during a forward pass. Ops append
//! nodes eagerly, so the node order is already a topological order and the
//! backward pass is a single reverse sweep in which each op's backward rule
//! runs exactly once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{Op, OpKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

/// Record of the op that produced a node: the primitive kind with its saved
/// values, plus the ordered inputs.
pub(crate) struct OpRecord<T> {
    pub op: Op<T>,
    pub inputs: Vec<VarId>,
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    /// Leaf flag: gradients are requested for this tensor.
    pub requires_grad: bool,
    /// True when some ancestor leaf requires a gradient.
    pub needs_grad: bool,
    /// `None` marks a leaf (input or parameter).
    pub producer: Option<OpRecord<T>>,
}

/// The autodiff tape. Confine a graph to one logical execution context while
/// a forward/backward pass is running; it is `Send` between passes.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    backward_done: bool,
    /// Test hook: flip the sign of gradients produced by ops of this kind.
    fault: Option<OpKind>,
    /// Running hash over every branch decision (ReLU sign masks, pooling
    /// argmax picks) taken during the forward pass. Two evaluations with
    /// different signatures sit on different sides of a non-differentiable
    /// point, so finite differences between them are meaningless.
    branch_sig: u64,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
            fault: None,
            branch_sig: 0xcbf2_9ce4_8422_2325,
        }
    }

    /// Inserts a leaf tensor (input or parameter).
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            needs_grad: requires_grad,
            producer: None,
        });
        VarId(self.nodes.len() - 1)
    }

    /// Inserts a leaf that never needs gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> VarId {
        self.leaf(value, false)
    }

    pub(crate) fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<VarId>) -> VarId {
        let needs_grad = inputs.iter().any(|id| self.nodes[id.0].needs_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            needs_grad,
            producer: Some(OpRecord { op, inputs }),
        });
        VarId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Reads the scalar held by a one-element node.
    pub fn scalar_value(&self, id: VarId) -> Result<T> {
        let t = self.value(id);
        if t.numel() != 1 {
            return Err(Error::Usage(format!(
                "expected a scalar node, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    pub fn grad(&self, id: VarId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn is_leaf(&self, id: VarId) -> bool {
        self.nodes[id.0].producer.is_none()
    }

    pub fn requires_grad(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub(crate) fn check_id(&self, id: VarId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("unknown var id {}", id.0)));
        }
        Ok(())
    }

    /// Folds one branch decision into the forward branch signature.
    pub(crate) fn note_branch(&mut self, bits: u64) {
        self.branch_sig = (self.branch_sig ^ bits).wrapping_mul(0x0000_0100_0000_01b3);
    }

    /// Hash of all data-dependent branch decisions of this graph's forward
    /// computations.
    pub fn branch_signature(&self) -> u64 {
        self.branch_sig
    }

    /// Sign-fault injection for verifying that gradient checking catches
    /// broken backward kernels. Every gradient produced by ops of `kind`
    /// comes out negated.
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    /// Runs the backward pass from a scalar root. Each producing op's
    /// backward rule executes exactly once, in reverse topological order;
    /// afterwards every leaf with `requires_grad` holds d(root)/d(leaf).
    pub fn backward(&mut self, root: VarId) -> Result<()> {
        self.check_id(root)?;
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this graph; build a fresh graph per pass".into(),
            ));
        }
        let root_node = &self.nodes[root.0];
        if root_node.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        self.backward_done = true;
        if !root_node.needs_grad {
            return Ok(()); // nothing upstream wants a gradient
        }
        self.nodes[root.0].grad = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            if self.nodes[i].grad.is_none() || self.nodes[i].producer.is_none() {
                continue;
            }
            let contributions = {
                let node = &self.nodes[i];
                let rec = node.producer.as_ref().unwrap();
                let grad = node.grad.as_ref().unwrap();
                crate::ops::op_backward(&self.nodes, rec, &node.value, grad)
            };
            let faulted = self
                .fault
                .map(|k| self.nodes[i].producer.as_ref().unwrap().op.kind() == k)
                .unwrap_or(false);
            for (input, mut contrib) in contributions {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                if faulted {
                    for g in contrib.iter_mut() {
                        *g = -*g;
                    }
                }
                match &mut self.nodes[input.0].grad {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contrib.iter()) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Removes and returns the accumulated gradient of a node.
    pub fn take_grad(&mut self, id: VarId) -> Option<Vec<T>> {
        self.nodes[id.0].grad.take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn leaf_roundtrip() {
        let mut g = Graph::<f32>::new();
        let t = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let id = g.leaf(t.clone(), true);
        assert_eq!(g.value(id), &t);
        assert!(g.is_leaf(id));
        assert!(g.grad(id).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::<f32>::new();
        let id = g.leaf(Tensor::zeros(&[2]), true);
        assert!(matches!(g.backward(id), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_runs_once() {
        let mut g = Graph::<f32>::new();
        let id = g.leaf(Tensor::scalar(3.0), true);
        g.backward(id).unwrap();
        assert!(matches!(g.backward(id), Err(Error::Usage(_))));
    }
}
