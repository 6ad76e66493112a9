//! Agreement between rankings, and a leave-one-out retraining oracle.
//!
//! A ranking is an ordered list of distinct example ids, most harmful first
//! (see [`crate::curation::rank`]).

mod loo;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use loo::{fit_convex, loo_oracle, ConvexFitConfig, LooReport};

use crate::data::round_half_up;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum End {
    Top,
    Bottom,
}

fn positions(ranking: &[u64]) -> Result<HashMap<u64, usize>> {
    let mut pos = HashMap::with_capacity(ranking.len());
    for (i, &id) in ranking.iter().enumerate() {
        if pos.insert(id, i).is_some() {
            return Err(Error::invalid(format!("id {id} appears twice in a ranking")));
        }
    }
    Ok(pos)
}

/// Spearman's ρ between two total orders over the same ids:
/// `1 − 6Σd² / (n(n² − 1))`.
pub fn spearman(a: &[u64], b: &[u64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "rankings have different lengths ({} and {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("Spearman correlation needs at least two ids"));
    }
    let pos_b = positions(b)?;
    positions(a)?;
    let mut d2 = 0u128;
    for (i, id) in a.iter().enumerate() {
        let j = *pos_b
            .get(id)
            .ok_or_else(|| Error::invalid(format!("id {id} is missing from the second ranking")))?;
        let d = i.abs_diff(j) as u128;
        d2 += d * d;
    }
    let n = n as f64;
    Ok(1.0 - 6.0 * d2 as f64 / (n * (n * n - 1.0)))
}

/// `|head_k(a) ∩ head_k(b)| / k`, or the same over the last `k` ids.
pub fn topk_overlap(a: &[u64], b: &[u64], k: usize, end: End) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > a.len() || k > b.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds ranking length {}",
            a.len().min(b.len())
        )));
    }
    let slice = |r: &[u64]| -> Vec<u64> {
        match end {
            End::Top => r[..k].to_vec(),
            End::Bottom => r[r.len() - k..].to_vec(),
        }
    };
    let sa = positions(&slice(a))?;
    let hits = slice(b).iter().filter(|id| sa.contains_key(id)).count();
    Ok(hits as f64 / k as f64)
}

/// Default k grid, as percentages of the ranking length.
pub const DEFAULT_K_PERCENTS: [f64; 5] = [1.0, 5.0, 10.0, 25.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapPoint {
    pub k: usize,
    pub overlap_top: f64,
    pub overlap_bottom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankAgreementReport {
    pub n: usize,
    pub spearman_rho: f64,
    pub curve: Vec<OverlapPoint>,
}

/// Percentages become `k = max(1, round(n · p / 100))`; duplicate k values
/// are kept once.
pub fn k_grid(n: usize, percents: &[f64]) -> Result<Vec<usize>> {
    let mut ks = Vec::new();
    for &p in percents {
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::invalid(format!("k percentage must lie in (0, 100], got {p}")));
        }
        let k = round_half_up(n as f64 * p / 100.0).clamp(1, n);
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    Ok(ks)
}

pub fn rank_agreement(a: &[u64], b: &[u64], percents: &[f64]) -> Result<RankAgreementReport> {
    let spearman_rho = spearman(a, b)?;
    let curve = k_grid(a.len(), percents)?
        .into_iter()
        .map(|k| {
            Ok(OverlapPoint {
                k,
                overlap_top: topk_overlap(a, b, k, End::Top)?,
                overlap_bottom: topk_overlap(a, b, k, End::Bottom)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankAgreementReport {
        n: a.len(),
        spearman_rho,
        curve,
    })
}

impl RankAgreementReport {
    /// `k,overlap_top,overlap_bottom` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.curve {
            w.serialize(p)?;
        }
        w.flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
