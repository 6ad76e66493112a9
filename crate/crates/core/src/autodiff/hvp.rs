use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{example_hvp, ordered_sum, Objective, ParameterVector};
use crate::error::{Error, Result};
use crate::rng::mix_seed;

/// Which examples enter the mean Hessian.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchSource {
    /// The same examples on every application.
    Fixed(Vec<usize>),
    /// A fresh uniform sample without replacement per application, derived
    /// from `(seed, stream, step)`.
    Sampled { size: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curvature {
    /// Exact Hessian of the objective.
    #[default]
    Exact,
    /// Treat the Hessian as zero, leaving only the damping term.
    Zero,
}

/// `v ↦ (H_B + λI) v` where `H_B` is the mean per-example Hessian over the
/// current batch, evaluated at a fixed point.
///
/// The operator never mutates its evaluation point. With a fixed batch,
/// applying it twice to the same vector gives bit-identical results.
pub struct HvpOperator<'a, O: Objective> {
    objective: &'a O,
    point: ParameterVector,
    damping: f64,
    batch: BatchSource,
    curvature: Curvature,
    stream: u64,
    applications: AtomicUsize,
}

impl<'a, O: Objective> HvpOperator<'a, O> {
    pub fn new(
        objective: &'a O,
        point: ParameterVector,
        damping: f64,
        batch: BatchSource,
    ) -> Result<Self> {
        if point.len() != objective.dim() {
            return Err(Error::invalid(format!(
                "evaluation point has length {}, objective expects {}",
                point.len(),
                objective.dim()
            )));
        }
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::invalid(format!(
                "damping must be a finite non-negative number, got {damping}"
            )));
        }
        match &batch {
            BatchSource::Fixed(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= objective.len()) {
                    return Err(Error::invalid(format!("batch index {bad} out of range")));
                }
            }
            BatchSource::Sampled { size, .. } => {
                if *size == 0 {
                    return Err(Error::invalid("HVP batch size must be at least 1"));
                }
            }
        }
        Ok(HvpOperator {
            objective,
            point,
            damping,
            batch,
            curvature: Curvature::Exact,
            stream: 0,
            applications: AtomicUsize::new(0),
        })
    }

    /// Deterministic operator over every example of the objective.
    pub fn full_batch(objective: &'a O, point: ParameterVector, damping: f64) -> Result<Self> {
        let all = (0..objective.len()).collect();
        Self::new(objective, point, damping, BatchSource::Fixed(all))
    }

    pub fn with_curvature(mut self, curvature: Curvature) -> Self {
        self.curvature = curvature;
        self
    }

    /// Selects an independent sampling stream (e.g. one per validation
    /// example) in stochastic mode.
    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn point(&self) -> &ParameterVector {
        &self.point
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.batch, BatchSource::Fixed(_)) || self.curvature == Curvature::Zero
    }

    /// Number of times [`apply`](Self::apply) has run.
    pub fn applications(&self) -> usize {
        self.applications.load(Ordering::Relaxed)
    }

    /// Batch used at `step`, in ascending index order.
    pub fn batch_for(&self, step: u64) -> Vec<usize> {
        match &self.batch {
            BatchSource::Fixed(idx) => {
                let mut idx = idx.clone();
                idx.sort_unstable();
                idx
            }
            BatchSource::Sampled { size, seed } => {
                let n = self.objective.len();
                if *size >= n {
                    return (0..n).collect();
                }
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[*seed, self.stream, step]));
                let mut idx = rand::seq::index::sample(&mut rng, n, *size).into_vec();
                idx.sort_unstable();
                idx
            }
        }
    }

    /// `(H_B + λI) v` with the batch chosen for `step`.
    pub fn apply(&self, v: &ParameterVector, step: u64) -> Result<ParameterVector> {
        if v.len() != self.dim() {
            return Err(Error::invalid(format!(
                "probe vector has length {}, expected {}",
                v.len(),
                self.dim()
            )));
        }
        self.applications.fetch_add(1, Ordering::Relaxed);
        let mut out = match self.curvature {
            Curvature::Zero => ParameterVector::zeros(self.dim()),
            Curvature::Exact => {
                let batch = self.batch_for(step);
                if batch.is_empty() {
                    ParameterVector::zeros(self.dim())
                } else {
                    let parts = batch
                        .par_iter()
                        .map(|&i| example_hvp(self.objective, &self.point, i, v))
                        .collect::<Result<Vec<_>>>()?;
                    ordered_sum(self.dim(), &parts).scaled(1.0 / batch.len() as f64)
                }
            }
        };
        out.axpy(self.damping, v);
        if !out.is_finite() {
            return Err(Error::numerical("non-finite Hessian-vector product"));
        }
        Ok(out)
    }
}
