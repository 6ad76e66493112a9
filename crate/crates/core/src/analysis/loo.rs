use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{example_hvp, loss, loss_and_gradient, ordered_sum, ParameterVector};
use crate::data::{Dataset, DatasetSplit, PreferencePair};
use crate::error::{Error, Result};
use crate::model::{Architecture, PairObjective, RewardModel};

/// Exact minimization of `(1/N) Σ ℓ_i(w) + (l2/2)‖w‖²` by damped Newton.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexFitConfig {
    pub l2: f64,
    /// Stop once the full objective's gradient norm falls below this.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for ConvexFitConfig {
    fn default() -> Self {
        ConvexFitConfig {
            l2: 1e-2,
            grad_tol: 1e-8,
            max_iters: 100,
        }
    }
}

struct Fit<'a> {
    objective: PairObjective<'a>,
    normalizer: f64,
    l2: f64,
}

impl Fit<'_> {
    fn value(&self, w: &ParameterVector) -> Result<f64> {
        let losses = (0..self.objective.pairs().len())
            .into_par_iter()
            .map(|i| loss(&self.objective, w, i))
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / self.normalizer + 0.5 * self.l2 * w.dot(w))
    }

    fn gradient(&self, w: &ParameterVector) -> Result<ParameterVector> {
        let parts = (0..self.objective.pairs().len())
            .into_par_iter()
            .map(|i| loss_and_gradient(&self.objective, w, i).map(|(_, g)| g))
            .collect::<Result<Vec<_>>>()?;
        let mut g = ordered_sum(w.len(), &parts).scaled(1.0 / self.normalizer);
        g.axpy(self.l2, w);
        Ok(g)
    }

    fn hessian(&self, w: &ParameterVector) -> Result<DMatrix<f64>> {
        let d = w.len();
        let n = self.objective.pairs().len();
        let columns = (0..d)
            .into_par_iter()
            .map(|k| {
                let mut e = ParameterVector::zeros(d);
                e.as_mut_slice()[k] = 1.0;
                let parts = (0..n)
                    .map(|i| example_hvp(&self.objective, w, i, &e))
                    .collect::<Result<Vec<_>>>()?;
                Ok(ordered_sum(d, &parts).scaled(1.0 / self.normalizer))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut h = DMatrix::from_fn(d, d, |i, k| columns[k][i]);
        for i in 0..d {
            h[(i, i)] += self.l2;
        }
        // Symmetrize away rounding.
        Ok((&h + h.transpose()) * 0.5)
    }

    fn minimize(&self, start: &ParameterVector, config: &ConvexFitConfig) -> Result<ParameterVector> {
        let mut w = start.clone();
        let mut value = self.value(&w)?;
        for _ in 0..config.max_iters {
            let g = self.gradient(&w)?;
            if g.norm() < config.grad_tol {
                return Ok(w);
            }
            let h = self.hessian(&w)?;
            let chol = h
                .cholesky()
                .ok_or_else(|| Error::numerical("Hessian of a convex fit is not positive definite"))?;
            let step = chol.solve(&DVector::from_column_slice(g.as_slice()));
            let step = ParameterVector::new(step.as_slice().to_vec());
            let slope = -g.dot(&step);
            let mut t = 1.0;
            loop {
                let mut trial = w.clone();
                trial.axpy(-t, &step);
                let v = self.value(&trial)?;
                // Armijo; near the optimum the decrease can fall below
                // rounding, so a full step that does not increase is taken.
                if v <= value + 1e-4 * t * slope || (t == 1.0 && v <= value) {
                    w = trial;
                    value = v;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    w = trial;
                    value = v;
                    break;
                }
            }
        }
        let g = self.gradient(&w)?;
        if g.norm() < config.grad_tol {
            Ok(w)
        } else {
            Err(Error::numerical(format!(
                "Newton fit stopped at gradient norm {:e} after {} iterations",
                g.norm(),
                config.max_iters
            )))
        }
    }
}

fn require_convex(model: &RewardModel) -> Result<()> {
    match model.architecture() {
        Architecture::Linear(_) => Ok(()),
        Architecture::Transformer(_) => Err(Error::invalid(
            "exact convex fitting needs a linear reward model",
        )),
    }
}

fn validate(config: &ConvexFitConfig) -> Result<()> {
    if !(config.l2 > 0.0 && config.l2.is_finite()) {
        return Err(Error::invalid("L2 strength must be positive"));
    }
    if !(config.grad_tol > 0.0) || config.max_iters == 0 {
        return Err(Error::invalid("need a positive tolerance and at least one iteration"));
    }
    Ok(())
}

fn fit_pairs(
    model: &RewardModel,
    pairs: &[PreferencePair],
    normalizer: f64,
    config: &ConvexFitConfig,
) -> Result<RewardModel> {
    let fit = Fit {
        objective: PairObjective::new(model, pairs)?,
        normalizer,
        l2: config.l2,
    };
    let w = fit.minimize(&ParameterVector::zeros(model.num_trainable()), config)?;
    model.with_trainable(w)
}

/// Trains the head of a linear model to the exact regularized optimum over
/// `dataset`, starting from zero.
pub fn fit_convex(model: &RewardModel, dataset: &Dataset, config: &ConvexFitConfig) -> Result<RewardModel> {
    require_convex(model)?;
    validate(config)?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot fit an empty dataset"));
    }
    fit_pairs(model, dataset.pairs(), dataset.len() as f64, config)
}

#[derive(Debug, Clone)]
pub struct LooReport {
    /// Optimum over the whole training set.
    pub full_model: RewardModel,
    pub full_val_loss: f64,
    pub train_ids: Vec<u64>,
    /// `delta_i = val_loss(all) − val_loss(without i)`: positive when
    /// removing the example lowers validation loss.
    pub deltas: Vec<f64>,
}

impl LooReport {
    pub fn delta_by_id(&self) -> Vec<(u64, f64)> {
        self.train_ids.iter().copied().zip(self.deltas.iter().copied()).collect()
    }
}

/// Mean pairwise loss of `model` over `dataset`, summed in dataset order.
fn mean_loss(model: &RewardModel, dataset: &Dataset) -> Result<f64> {
    let obj = PairObjective::new(model, dataset.pairs())?;
    let losses = (0..dataset.len())
        .into_par_iter()
        .map(|i| loss(&obj, model.trainable(), i))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / dataset.len() as f64)
}

/// Retrains without each training example in turn and records the change
/// in mean validation loss.
///
/// Every fit starts from zero and runs to `grad_tol`. The left-out
/// objective keeps the full-data `1/n` weighting, so it differs from the
/// full objective only by the removed term.
pub fn loo_oracle(model: &RewardModel, split: &DatasetSplit, config: &ConvexFitConfig) -> Result<LooReport> {
    require_convex(model)?;
    validate(config)?;
    let n = split.train.len();
    if n == 0 || split.val.is_empty() {
        return Err(Error::invalid("oracle needs nonempty train and validation sets"));
    }
    if n > 200 {
        return Err(Error::invalid(format!(
            "oracle is limited to 200 training examples, got {n}"
        )));
    }
    let full_model = fit_pairs(model, split.train.pairs(), n as f64, config)?;
    let full_val_loss = mean_loss(&full_model, &split.val)?;
    let deltas = split
        .train
        .pairs()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let oracle_err = |e: Error| Error::Oracle {
                id: p.id,
                message: e.to_string(),
            };
            let mut rest = split.train.pairs().to_vec();
            rest.remove(i);
            let m = fit_pairs(model, &rest, n as f64, config).map_err(oracle_err)?;
            Ok(full_val_loss - mean_loss(&m, &split.val).map_err(oracle_err)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LooReport {
        full_model,
        full_val_loss,
        train_ids: split.train.ids(),
        deltas,
    })
}
