use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CgConfig, CgReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `-⟨(H + λI)⁻¹ g_val, g_train⟩`
    Influence,
    /// `-⟨g_val, g_train⟩`
    GradientSimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMetadata {
    pub method: Method,
    /// Solver settings; absent for gradient similarity.
    pub cg: Option<CgConfig>,
    /// One report per validation example, in column order.
    pub cg_reports: Vec<CgReport>,
    pub checkpoint_id: String,
    pub model_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub train_gradient_evaluations: usize,
    pub hvp_applications: usize,
}

/// Scores `I[i][j]` for training example `i` against validation example `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    train_ids: Vec<u64>,
    val_ids: Vec<u64>,
    /// Row-major, `train × val`.
    scores: Vec<f64>,
    means: Vec<f64>,
    pub metadata: ScoreMetadata,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    train_ids: Vec<u64>,
    val_ids: Vec<u64>,
    means: Vec<f64>,
    metadata: ScoreMetadata,
}

#[derive(Serialize, Deserialize)]
struct Row {
    train_id: u64,
    val_id: u64,
    score: f64,
}

impl ScoreTable {
    pub fn new(
        train_ids: Vec<u64>,
        val_ids: Vec<u64>,
        scores: Vec<f64>,
        metadata: ScoreMetadata,
    ) -> Result<Self> {
        if train_ids.is_empty() || val_ids.is_empty() {
            return Err(Error::invalid("score table needs at least one train and one validation id"));
        }
        if scores.len() != train_ids.len() * val_ids.len() {
            return Err(Error::invalid(format!(
                "{} scores for a {}×{} table",
                scores.len(),
                train_ids.len(),
                val_ids.len()
            )));
        }
        let cols = val_ids.len();
        let means = scores
            .chunks(cols)
            .map(|row| row.iter().sum::<f64>() / cols as f64)
            .collect();
        Ok(ScoreTable {
            train_ids,
            val_ids,
            scores,
            means,
            metadata,
        })
    }

    pub fn train_ids(&self) -> &[u64] {
        &self.train_ids
    }

    pub fn val_ids(&self) -> &[u64] {
        &self.val_ids
    }

    /// Score of training row `i` against validation column `j`.
    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.val_ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.val_ids.len();
        &self.scores[i * cols..(i + 1) * cols]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Mean score over validation examples, one per training row.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// `(train_id, mean)` pairs in row order.
    pub fn mean_by_id(&self) -> Vec<(u64, f64)> {
        self.train_ids.iter().copied().zip(self.means.iter().copied()).collect()
    }

    /// Writes `train_id,val_id,score` rows (train-major) to `csv_path` and the
    /// ids, means and metadata to `json_path`.
    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        for (i, &t) in self.train_ids.iter().enumerate() {
            for (j, &v) in self.val_ids.iter().enumerate() {
                w.serialize(Row {
                    train_id: t,
                    val_id: v,
                    score: self.score(i, j),
                })?;
            }
        }
        w.flush()
            .map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;
        let sidecar = Sidecar {
            train_ids: self.train_ids.clone(),
            val_ids: self.val_ids.clone(),
            means: self.means.clone(),
            metadata: self.metadata.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&sidecar)?;
        bytes.push(b'\n');
        fs::write(json_path, bytes)
            .map_err(|e| Error::io(format!("writing {}", json_path.display()), e))
    }

    pub fn load(csv_path: &Path, json_path: &Path) -> Result<Self> {
        let bytes = fs::read(json_path)
            .map_err(|e| Error::io(format!("reading {}", json_path.display()), e))?;
        let sidecar: Sidecar = serde_json::from_slice(&bytes)?;
        let rows_of: HashMap<u64, usize> =
            sidecar.train_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let cols_of: HashMap<u64, usize> =
            sidecar.val_ids.iter().enumerate().map(|(j, &id)| (id, j)).collect();
        let cols = sidecar.val_ids.len();
        let mut scores = vec![f64::NAN; sidecar.train_ids.len() * cols];
        let mut seen = vec![false; scores.len()];
        let mut r = csv::Reader::from_path(csv_path)?;
        for (line, row) in r.deserialize::<Row>().enumerate() {
            let row = row?;
            let parse_err = |message: String| Error::Parse {
                path: csv_path.to_path_buf(),
                line: line + 2,
                message,
            };
            let i = *rows_of
                .get(&row.train_id)
                .ok_or_else(|| parse_err(format!("unknown train id {}", row.train_id)))?;
            let j = *cols_of
                .get(&row.val_id)
                .ok_or_else(|| parse_err(format!("unknown validation id {}", row.val_id)))?;
            if std::mem::replace(&mut seen[i * cols + j], true) {
                return Err(parse_err("duplicate (train_id, val_id) entry".into()));
            }
            scores[i * cols + j] = row.score;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid(format!(
                "{} is missing entries for its declared ids",
                csv_path.display()
            )));
        }
        let table = ScoreTable::new(sidecar.train_ids, sidecar.val_ids, scores, sidecar.metadata)?;
        if table.means != sidecar.means {
            return Err(Error::invalid(format!(
                "{} means disagree with {}",
                json_path.display(),
                csv_path.display()
            )));
        }
        Ok(table)
    }
}
