//! Named parameter tensors.
//!
//! Names are dotted paths whose first segment is the parameter group
//! (`g`, `rph`, `fusion`, `disc`, `reg`). Iteration order is insertion
//! order and is part of the checkpoint format.

use indexmap::IndexMap;

use crate::error::{contract, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    /// Frozen tensors (input normalisation statistics) are bound as graph
    /// constants and skipped by optimizers.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) {
        self.entries.insert(name.into(), Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.get(name).map(|p| &p.value)
    }

    /// Panicking lookup for names the caller created itself.
    pub fn tensor(&self, name: &str) -> &Matrix {
        self.get(name).unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.is_finite())
    }

    /// Distinct group prefixes in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for k in self.entries.keys() {
            let g = group_of(k).to_string();
            if !out.contains(&g) {
                out.push(g);
            }
        }
        out
    }

    /// Copy restricted to the named groups.
    pub fn select_groups(&self, groups: &[&str]) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| groups.contains(&group_of(k)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Inserts or overwrites every entry of `other`.
    pub fn merge(&mut self, other: &ParamSet) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Replaces the values of existing entries with those in `other`,
    /// requiring identical shapes.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        for (k, v) in &other.entries {
            let dst = self
                .entries
                .get_mut(k)
                .ok_or_else(|| contract(format!("unexpected parameter `{k}`")))?;
            if dst.value.shape() != v.value.shape() {
                return Err(contract(format!(
                    "parameter `{k}` has shape {:?}, expected {:?}",
                    v.value.shape(),
                    dst.value.shape()
                )));
            }
            dst.value = v.value.clone();
        }
        Ok(())
    }

    /// Adds every tensor to `graph`: trainable ones as parameters, frozen
    /// ones as constants.
    pub fn bind(&self, graph: &mut Graph) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|(k, p)| {
                let v = if p.trainable {
                    graph.param(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bindings { vars }
    }
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients of every trainable tensor, zero-filled where no gradient
    /// reached it.
    pub fn gradients(&self, grads: &Gradients, params: &ParamSet) -> GradSet {
        let mut out = IndexMap::new();
        for (k, p) in &params.entries {
            if !p.trainable {
                continue;
            }
            let v = self.var(k);
            out.insert(k.clone(), grads.get_or_zeros(v, p.value.shape()));
        }
        GradSet { grads: out }
    }
}

/// Gradient tensors keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradSet {
    grads: IndexMap<String, Matrix>,
}

impl GradSet {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(Matrix::is_finite)
    }
}
