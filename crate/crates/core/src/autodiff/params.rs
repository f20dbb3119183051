use std::collections::BTreeMap;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named collection of tensors; iteration order is the lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Puts every tensor on the graph, as a trainable leaf when `trainable(name)`
    /// holds and as a constant otherwise.
    pub fn register(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> ParamNodes {
        let nodes = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let id = if trainable(name) {
                    g.param(name, t.clone())
                } else {
                    g.input(t.clone())
                };
                (name.clone(), id)
            })
            .collect();
        ParamNodes { nodes }
    }

    pub fn register_all(&self, g: &mut Graph) -> ParamNodes {
        self.register(g, |_| true)
    }

    /// Puts every tensor on the graph as a constant.
    pub fn register_frozen(&self, g: &mut Graph) -> ParamNodes {
        self.register(g, |_| false)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamNodes {
    nodes: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("parameter {name} is not registered")))
    }

    pub fn opt(&self, name: &str) -> Option<NodeId> {
        self.nodes.get(name).copied()
    }
}
