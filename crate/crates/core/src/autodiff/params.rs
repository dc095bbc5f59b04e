use std::collections::BTreeMap;

use super::graph::{GradientMap, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named, ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet(BTreeMap<String, Tensor>);

/// Graph handles for a bound [`ParamSet`], looked up by name.
#[derive(Clone, Debug, Default)]
pub struct Bindings(BTreeMap<String, Var>);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.0
            .get(name)
            .ok_or_else(|| Error::usage(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// Registers every tensor as a named parameter of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bindings {
        Bindings(
            self.0
                .iter()
                .map(|(name, t)| (name.clone(), graph.param(name.clone(), t.clone())))
                .collect(),
        )
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet(
            self.0
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.rows(), t.cols())))
                .collect(),
        )
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.0.extend(other.0);
    }

    /// Checks that `grads` has exactly this set's names and shapes.
    pub fn check_aligned(&self, grads: &GradientMap) -> Result<()> {
        if grads.len() != self.len() {
            return Err(Error::usage(format!(
                "gradient map has {} entries, parameters have {}",
                grads.len(),
                self.len()
            )));
        }
        for (name, t) in &self.0 {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::usage(format!("no gradient for {name}")))?;
            if g.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "gradient alignment",
                    lhs: t.shape(),
                    rhs: g.shape(),
                });
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet(iter.into_iter().collect())
    }
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::usage(format!("parameter {name} is not bound")))
    }

    pub fn merge(mut self, other: Bindings) -> Bindings {
        self.0.extend(other.0);
        self
    }
}
