use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, Real, Var};
use crate::data::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub vocab_size: u32,
    pub features: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            vocab_size: 4096,
            features: 32,
        }
    }
}

/// Frozen random projection of token counts; the head on top is trainable.
///
/// `features(tokens) = mean_t projection[t, :]`, `reward = features · head`.
/// With only the head trainable, the pairwise loss is convex in the
/// trainable coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBase {
    pub config: LinearConfig,
    /// `vocab_size × features`, row-major.
    pub projection: Vec<f64>,
}

impl LinearBase {
    pub(crate) fn init(config: LinearConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = config.vocab_size as usize * config.features;
        let projection = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        LinearBase { config, projection }
    }

    pub fn frozen_count(&self) -> usize {
        self.projection.len()
    }

    pub fn features(&self, tokens: &[TokenId]) -> Vec<f64> {
        let k = self.config.features;
        let mut phi = vec![0.0; k];
        for &t in tokens {
            let row = &self.projection[t as usize * k..(t as usize + 1) * k];
            for (p, r) in phi.iter_mut().zip(row) {
                *p += r;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        phi.iter_mut().for_each(|p| *p *= inv);
        phi
    }

    pub(crate) fn record<S: Real>(&self, g: &mut Graph<S>, head: Var, tokens: &[TokenId]) -> Var {
        let phi = self.features(tokens);
        let x = g.constant(Matrix::from_f64(1, phi.len(), &phi));
        g.matmul(x, head)
    }
}
