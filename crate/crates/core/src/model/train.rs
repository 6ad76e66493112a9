use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PairObjective, RewardModel};
use crate::autodiff::{loss_and_gradient, ordered_sum};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::mix_seed;

/// AdamW with cosine decay to zero, no warmup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Seeds the data order and the adapter dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 3,
            batch_size: 124,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("optimizer epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("optimizer betas must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let progress = step as f64 / total.max(1) as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean batch loss before the update.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RewardModel,
    pub loss_curve: Vec<StepLoss>,
}

/// Fine-tunes the trainable subspace of `model` on `dataset`.
///
/// `model` itself is left untouched; the result is a new snapshot.
pub fn train(model: &RewardModel, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let pairs = dataset.pairs();
    // Token validation happens once here.
    PairObjective::new(model, pairs)?;

    let dim = model.num_trainable();
    let mut theta = model.trainable().clone();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let steps_per_epoch = pairs.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let mut curve = Vec::with_capacity(total);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, epoch as u64]));
        order.shuffle(&mut rng);

        for batch in order.chunks(config.batch_size) {
            // Parameters come from `theta`; the model only supplies the frozen base.
            let objective = PairObjective {
                model,
                pairs,
                dropout_seed: None,
            }
            .with_dropout(mix_seed(&[config.seed, 0xD0, step as u64]));
            let mut sorted = batch.to_vec();
            sorted.sort_unstable();
            let results = sorted
                .par_iter()
                .map(|&i| loss_and_gradient(&objective, &theta, i))
                .collect::<Vec<_>>();
            let mut losses = Vec::with_capacity(results.len());
            let mut grads = Vec::with_capacity(results.len());
            for r in results {
                match r {
                    Ok((l, g)) => {
                        losses.push(l);
                        grads.push(g);
                    }
                    Err(Error::Numerical { .. }) => {
                        return Err(Error::Training {
                            step,
                            loss: f64::NAN,
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
            let inv = 1.0 / sorted.len() as f64;
            let loss = losses.iter().sum::<f64>() * inv;
            if !loss.is_finite() {
                return Err(Error::Training { step, loss });
            }
            let grad = ordered_sum(dim, &grads).scaled(inv);

            let lr = config.lr_at(step, total);
            let t = (step + 1) as i32;
            let bc1 = 1.0 - config.beta1.powi(t);
            let bc2 = 1.0 - config.beta2.powi(t);
            let coords = theta.as_mut_slice();
            for i in 0..dim {
                let g = grad[i];
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                coords[i] -= lr * (mhat / (vhat.sqrt() + config.eps) + config.weight_decay * coords[i]);
            }
            if !theta.is_finite() {
                return Err(Error::Training { step, loss });
            }
            curve.push(StepLoss {
                step,
                epoch,
                learning_rate: lr,
                loss,
            });
            step += 1;
        }
    }

    Ok(TrainOutcome {
        model: model.with_trainable(theta)?,
        loss_curve: curve,
    })
}

pub fn write_loss_curve(curve: &[StepLoss], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in curve {
        w.serialize(row)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
