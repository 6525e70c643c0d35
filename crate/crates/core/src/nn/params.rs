use std::collections::BTreeMap;

use crate::nn::{NnError, Tensor};
use crate::scalar::Scalar;

/// Named tensors. Used for model state, gradients, and the `phi`/`psi`
/// halves of a model exchanged during aggregation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

/// Gradients mirror the trainable parameters by name and shape.
pub type Gradients<S> = ParamSet<S>;

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<S>> {
        self.tensors.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Same names and same shapes.
    pub fn is_congruent(&self, other: &ParamSet<S>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, va), (kb, vb))| ka == kb && va.same_shape(vb))
    }

    /// Disjoint union. Fails on a repeated name.
    pub fn merge(mut self, other: ParamSet<S>) -> Result<Self, NnError> {
        for (k, v) in other.tensors {
            if self.tensors.contains_key(&k) {
                return Err(NnError::DuplicateParam(k));
            }
            self.tensors.insert(k, v);
        }
        Ok(self)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Largest absolute elementwise difference, or `None` if incongruent.
    pub fn max_abs_diff(&self, other: &ParamSet<S>) -> Option<S> {
        if !self.is_congruent(other) {
            return None;
        }
        let mut m = S::zero();
        for (a, b) in self.tensors.values().zip(other.tensors.values()) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                m = m.max((x - y).abs());
            }
        }
        Some(m)
    }
}

impl<S> FromIterator<(String, Tensor<S>)> for ParamSet<S> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<S>)>>(iter: I) -> Self {
        Self {
            tensors: iter.into_iter().collect(),
        }
    }
}
