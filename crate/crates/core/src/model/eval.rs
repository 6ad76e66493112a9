use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RewardModel;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Pairwise accuracy with a 95% Wald interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub n: usize,
    pub wald_half_width: f64,
    /// Per pair, in dataset order: `reward(chosen) > reward(rejected)`.
    pub correct: Vec<bool>,
}

/// `1.96 · √(p(1-p)/n)`
pub fn wald_half_width(p: f64, n: usize) -> f64 {
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

/// A pair counts as correct only on a strict win; ties are wrong.
pub fn evaluate(model: &RewardModel, dataset: &Dataset) -> Result<AccuracyReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let correct = dataset
        .pairs()
        .par_iter()
        .map(|p| Ok(model.reward(&p.chosen)? > model.reward(&p.rejected)?))
        .collect::<Result<Vec<bool>>>()?;
    let n = correct.len();
    let hits = correct.iter().filter(|&&c| c).count();
    let accuracy = hits as f64 / n as f64;
    Ok(AccuracyReport {
        accuracy,
        n,
        wald_half_width: wald_half_width(accuracy, n),
        correct,
    })
}

/// One-row CSV: `accuracy,wald_half_width,n`.
pub fn write_accuracy_csv(report: &AccuracyReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["accuracy", "wald_half_width", "n"])?;
    w.write_record([
        report.accuracy.to_string(),
        report.wald_half_width.to_string(),
        report.n.to_string(),
    ])?;
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
