use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat coordinates over the trainable subspace.
///
/// The coordinate layout is defined by whoever registered the parameters
/// (see [`crate::model::RewardModel::layout`]); it is fixed for the lifetime
/// of a model, so vectors produced by different operations on the same model
/// can be combined directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(coords: Vec<f64>) -> Self {
        ParameterVector(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        ParameterVector(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParameterVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Length-checked inner product.
    pub fn try_dot(&self, other: &ParameterVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::invalid(format!(
                "parameter vector length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self.dot(other))
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &ParameterVector) {
        debug_assert_eq!(self.len(), x.len());
        for (a, b) in self.0.iter_mut().zip(&x.0) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> ParameterVector {
        ParameterVector(self.0.iter().map(|x| alpha * x).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        ParameterVector(v)
    }
}

impl std::ops::Index<usize> for ParameterVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}
