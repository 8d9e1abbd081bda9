//! Named parameter store with stable insertion order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Flat collection of named tensors. Iteration follows insertion order, which
/// is the deterministic build order of the network.
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Usage(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.into(), self.entries.len());
        self.entries.push((name.into(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).copied().map(|i| &mut self.entries[i].1)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Total scalar count across all parameters.
    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Casts the whole store through `f64` to another element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, t) in self.iter() {
            out.insert(name, t.cast::<U>()).expect("names stay unique");
        }
        out
    }

    /// Attaches every parameter to a graph as a leaf. `requires_grad` decides
    /// per name whether the leaf tracks gradients (frozen parameters do not).
    pub fn attach<F: Fn(&str) -> bool>(
        &self,
        graph: &mut Graph<T>,
        requires_grad: F,
    ) -> AttachedParams {
        let mut vars = Vec::with_capacity(self.entries.len());
        let mut by_name = BTreeMap::new();
        for (name, t) in self.iter() {
            let id = graph.leaf(t.clone(), requires_grad(name));
            by_name.insert(String::from(name), id);
            vars.push(id);
        }
        AttachedParams { vars, by_name }
    }
}

/// Graph handles for every parameter of a store, aligned with store order.
pub struct AttachedParams {
    pub vars: Vec<VarId>,
    by_name: BTreeMap<String, VarId>,
}

impl AttachedParams {
    /// Builds the handle set from externally created leaves, e.g. when a
    /// gradient checker owns the parameter tensors.
    pub fn from_pairs<I: IntoIterator<Item = (String, VarId)>>(pairs: I) -> Self {
        let mut vars = Vec::new();
        let mut by_name = BTreeMap::new();
        for (name, id) in pairs {
            by_name.insert(name, id);
            vars.push(id);
        }
        AttachedParams { vars, by_name }
    }

    pub fn var(&self, name: &str) -> Result<VarId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut store = ParamStore::<f32>::new();
        store.insert("b", Tensor::zeros(&[2])).unwrap();
        store.insert("a", Tensor::zeros(&[3])).unwrap();
        let names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(store.total_params(), 5);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::zeros(&[1])).unwrap();
        assert!(store.insert("w", Tensor::zeros(&[1])).is_err());
    }
}
