//! Rank training examples by mean score, prune one end of the ranking,
//! retrain from the original checkpoint and evaluate on the untouched test
//! split.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{round_half_up, DatasetSplit};
use crate::error::{Error, Result};
use crate::influence::ScoreTable;
use crate::model::{evaluate, train, AccuracyReport, RewardModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Influence,
    GradientSimilarity,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Remove the most positive mean scores.
    DropMostHarmful,
    /// Remove the most negative mean scores.
    DropMostHelpful,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Influence => "influence",
            Strategy::GradientSimilarity => "gradient_similarity",
            Strategy::Random => "random",
        }
    }
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::DropMostHarmful => "drop_most_harmful",
            Direction::DropMostHelpful => "drop_most_helpful",
        }
    }
}

pub const DEFAULT_FRACTIONS: [f64; 5] = [5.0, 10.0, 15.0, 20.0, 30.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationPlan {
    pub strategy: Strategy,
    pub direction: Direction,
    /// Percentage of training examples to remove, in `(0, 100)`.
    pub fraction: f64,
    /// Seeds the random strategy's permutation.
    pub seed: u64,
}

impl fmt::Display for CurationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}%",
            self.strategy.as_str(),
            self.direction.as_str(),
            self.fraction
        )
    }
}

impl CurationPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 100.0) {
            return Err(Error::invalid(format!(
                "exclusion fraction must lie in (0, 100), got {}",
                self.fraction
            )));
        }
        Ok(())
    }

    /// `round(n · fraction / 100)`, halves rounded up.
    pub fn removal_count(&self, n: usize) -> usize {
        round_half_up(n as f64 * self.fraction / 100.0)
    }
}

/// Training ids by descending mean score; equal means keep ascending id
/// order.
pub fn rank(scores: &ScoreTable) -> Vec<u64> {
    let mut rows = scores.mean_by_id();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    rows.into_iter().map(|(id, _)| id).collect()
}

/// A seeded permutation of `ids` (taken in ascending order first).
pub fn random_ranking(ids: &[u64], seed: u64) -> Vec<u64> {
    let mut out = ids.to_vec();
    out.sort_unstable();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub plan: CurationPlan,
    pub split: DatasetSplit,
    /// Removed ids in ranking order.
    pub removed: Vec<u64>,
}

/// Removes the head (harmful) or tail (helpful) of `ranking` from the
/// training set. A random ranking carries no direction, so its head is
/// removed for both labels.
pub fn prune(split: &DatasetSplit, ranking: &[u64], plan: &CurationPlan) -> Result<Pruned> {
    plan.validate()?;
    let train_ids: HashSet<u64> = split.train.ids().into_iter().collect();
    let ranked: HashSet<u64> = ranking.iter().copied().collect();
    if ranked.len() != ranking.len() || ranked != train_ids {
        return Err(Error::invalid(
            "ranking must list every training id exactly once",
        ));
    }
    let n = ranking.len();
    let count = plan.removal_count(n);
    if count >= n {
        return Err(Error::invalid(format!(
            "removing {count} of {n} training examples leaves nothing to train on"
        )));
    }
    let removed: Vec<u64> = match (plan.strategy, plan.direction) {
        (Strategy::Random, _) | (_, Direction::DropMostHarmful) => ranking[..count].to_vec(),
        (_, Direction::DropMostHelpful) => ranking[n - count..].to_vec(),
    };
    let drop: HashSet<u64> = removed.iter().copied().collect();
    Ok(Pruned {
        plan: *plan,
        split: split.with_train(split.train.without(&drop)),
        removed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationResult {
    /// `None` for the no-exclusion baseline.
    pub plan: Option<CurationPlan>,
    pub retained_count: usize,
    pub accuracy: AccuracyReport,
    pub pruned_ids: Vec<u64>,
    /// Data-order and dropout seed used for retraining.
    pub train_seed: u64,
}

/// Trains from `checkpoint` on the split's training set and evaluates on its
/// test set. `checkpoint` is never modified.
pub fn retrain_eval(
    checkpoint: &RewardModel,
    split: &DatasetSplit,
    train_config: &TrainConfig,
    plan: Option<CurationPlan>,
    pruned_ids: Vec<u64>,
) -> Result<CurationResult> {
    let wrap = |e: Error| match plan {
        Some(p) => Error::AtPlan {
            plan: p.to_string(),
            source: Box::new(e),
        },
        None => e,
    };
    let trained = train(checkpoint, &split.train, train_config).map_err(wrap)?;
    let accuracy = evaluate(&trained.model, &split.test).map_err(wrap)?;
    Ok(CurationResult {
        plan,
        retained_count: split.train.len(),
        accuracy,
        pruned_ids,
        train_seed: train_config.seed,
    })
}

/// Which scored strategies a sweep covers. The random strategy is always
/// included.
#[derive(Debug, Clone, Copy)]
pub struct SweepScores<'a> {
    pub influence: Option<&'a ScoreTable>,
    pub gradient_similarity: Option<&'a ScoreTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    /// Seed of the random strategy's permutation.
    pub random_seed: u64,
    /// Each cell is retrained this many times with training seeds
    /// `seed, seed + 1, …`.
    pub repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            random_seed: 0,
            repeats: 1,
        }
    }
}

/// One sweep cell. A failed cell keeps its error message and the sweep
/// carries on.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub plan: Option<CurationPlan>,
    pub train_seed: u64,
    pub outcome: std::result::Result<CurationResult, String>,
}

/// Baseline plus every strategy × direction × fraction, each repeated
/// `config.repeats` times. Rows come back in that order whatever the
/// scheduling.
pub fn sweep(
    checkpoint: &RewardModel,
    split: &DatasetSplit,
    scores: SweepScores<'_>,
    config: &SweepConfig,
    train_config: &TrainConfig,
) -> Result<Vec<SweepCell>> {
    if config.repeats == 0 {
        return Err(Error::invalid("sweep needs at least one repeat"));
    }
    let train_ids = split.train.ids();
    for table in [scores.influence, scores.gradient_similarity].into_iter().flatten() {
        let mut ids = table.train_ids().to_vec();
        ids.sort_unstable();
        if ids != train_ids {
            return Err(Error::invalid(
                "score table was computed on a different training set",
            ));
        }
    }
    let mut rankings = Vec::new();
    if let Some(t) = scores.influence {
        rankings.push((Strategy::Influence, rank(t)));
    }
    if let Some(t) = scores.gradient_similarity {
        rankings.push((Strategy::GradientSimilarity, rank(t)));
    }
    rankings.push((Strategy::Random, random_ranking(&train_ids, config.random_seed)));

    let mut jobs: Vec<(Option<(CurationPlan, usize)>, u64)> = Vec::new();
    for r in 0..config.repeats {
        let seed = train_config.seed.wrapping_add(r as u64);
        jobs.push((None, seed));
        for (k, (strategy, _)) in rankings.iter().enumerate() {
            for direction in [Direction::DropMostHarmful, Direction::DropMostHelpful] {
                for &fraction in &config.fractions {
                    let plan = CurationPlan {
                        strategy: *strategy,
                        direction,
                        fraction,
                        seed: config.random_seed,
                    };
                    jobs.push((Some((plan, k)), seed));
                }
            }
        }
    }

    Ok(jobs
        .par_iter()
        .map(|(job, seed)| {
            let cfg = TrainConfig {
                seed: *seed,
                ..*train_config
            };
            let outcome = match job {
                None => retrain_eval(checkpoint, split, &cfg, None, vec![]),
                Some((plan, k)) => prune(split, &rankings[*k].1, plan)
                    .map_err(|e| Error::AtPlan {
                        plan: plan.to_string(),
                        source: Box::new(e),
                    })
                    .and_then(|p| retrain_eval(checkpoint, &p.split, &cfg, Some(*plan), p.removed)),
            };
            if let Err(e) = &outcome {
                log::warn!("sweep cell failed: {e}");
            }
            SweepCell {
                plan: job.map(|(p, _)| p),
                train_seed: *seed,
                outcome: outcome.map_err(|e| e.to_string()),
            }
        })
        .collect())
}

#[derive(Serialize)]
struct SweepRow<'a> {
    strategy: &'a str,
    direction: &'a str,
    fraction: f64,
    accuracy: Option<f64>,
    wald_half_width: Option<f64>,
    n: Option<usize>,
    retained_count: Option<usize>,
    seed: u64,
    error: &'a str,
}

/// `strategy,direction,fraction,accuracy,wald_half_width,n,retained_count,seed,error`.
/// The baseline row has strategy and direction `none` and fraction 0;
/// failed cells leave the numeric columns empty and fill `error`.
pub fn write_sweep_csv(cells: &[SweepCell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        let (strategy, direction, fraction) = match &c.plan {
            Some(p) => (p.strategy.as_str(), p.direction.as_str(), p.fraction),
            None => ("none", "none", 0.0),
        };
        let ok = c.outcome.as_ref().ok();
        w.serialize(SweepRow {
            strategy,
            direction,
            fraction,
            accuracy: ok.map(|r| r.accuracy.accuracy),
            wald_half_width: ok.map(|r| r.accuracy.wald_half_width),
            n: ok.map(|r| r.accuracy.n),
            retained_count: ok.map(|r| r.retained_count),
            seed: c.train_seed,
            error: c.outcome.as_ref().err().map(String::as_str).unwrap_or(""),
        })?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, PreferencePair};
    use crate::influence::{Method, ScoreMetadata};
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    fn table(ids: Vec<u64>, means: Vec<f64>) -> ScoreTable {
        ScoreTable::new(
            ids,
            vec![0],
            means,
            ScoreMetadata {
                method: Method::Influence,
                cg: None,
                cg_reports: vec![],
                checkpoint_id: String::new(),
                model_seed: None,
                split_seed: None,
                train_gradient_evaluations: 0,
                hvp_applications: 0,
            },
        )
        .unwrap()
    }

    fn split_of(n: u64) -> DatasetSplit {
        let ds = |lo: u64, hi: u64| {
            Dataset::new(
                (lo..hi)
                    .map(|i| PreferencePair::new(i, vec![(i % 4) as u32], vec![((i + 1) % 4) as u32]))
                    .collect(),
            )
            .unwrap()
        };
        DatasetSplit {
            train: ds(0, n),
            val: ds(1000, 1003),
            test: ds(2000, 2010),
            split_seed: 0,
        }
    }

    fn plan(strategy: Strategy, direction: Direction, fraction: f64) -> CurationPlan {
        CurationPlan {
            strategy,
            direction,
            fraction,
            seed: 3,
        }
    }

    #[test]
    fn rank_orders_by_descending_mean() {
        // a = 0, b = 1, c = 2
        assert_eq!(rank(&table(vec![0, 1, 2], vec![0.5, -0.2, 0.0])), vec![0, 2, 1]);
        assert_eq!(rank(&table(vec![7, 3, 5], vec![1.0, 1.0, 1.0])), vec![3, 5, 7]);
    }

    #[test]
    fn prune_heads_and_tails() {
        let s = split_of(10);
        let ranking: Vec<u64> = vec![4, 0, 1, 2, 3, 5, 6, 7, 8, 9];
        let p = prune(&s, &ranking, &plan(Strategy::Influence, Direction::DropMostHarmful, 10.0)).unwrap();
        assert_eq!(p.removed, vec![4]);
        assert_eq!(p.split.train.len(), 9);
        let p = prune(&s, &ranking, &plan(Strategy::Influence, Direction::DropMostHelpful, 30.0)).unwrap();
        assert_eq!(p.removed, vec![7, 8, 9]);
        assert_eq!(p.split.val, s.val);
        assert_eq!(p.split.test, s.test);
    }

    #[test]
    fn prune_rejects_bad_input() {
        let s = split_of(10);
        let ranking: Vec<u64> = (0..10).collect();
        assert!(prune(&s, &ranking[..9], &plan(Strategy::Influence, Direction::DropMostHarmful, 10.0)).is_err());
        assert!(prune(&s, &ranking, &plan(Strategy::Influence, Direction::DropMostHarmful, 0.0)).is_err());
        assert!(prune(&s, &ranking, &plan(Strategy::Influence, Direction::DropMostHarmful, 100.0)).is_err());
        // 99.9% of 10 rounds to all 10.
        assert!(prune(&s, &ranking, &plan(Strategy::Influence, Direction::DropMostHarmful, 99.9)).is_err());
    }

    #[test]
    fn random_strategy_is_seeded_and_directionless() {
        let s = split_of(20);
        let r1 = random_ranking(&s.train.ids(), 3);
        let r2 = random_ranking(&s.train.ids(), 3);
        assert_eq!(r1, r2);
        let a = prune(&s, &r1, &plan(Strategy::Random, Direction::DropMostHarmful, 25.0)).unwrap();
        let b = prune(&s, &r2, &plan(Strategy::Random, Direction::DropMostHelpful, 25.0)).unwrap();
        assert_eq!(a.removed, b.removed);
        assert_ne!(random_ranking(&s.train.ids(), 4), r1);
    }

    #[test]
    fn round_half_up_on_removal_count() {
        let p = plan(Strategy::Influence, Direction::DropMostHarmful, 5.0);
        assert_eq!(p.removal_count(10), 1);
        assert_eq!(p.removal_count(30), 2);
        assert_eq!(p.removal_count(9), 0);
    }

    fn tiny_checkpoint() -> RewardModel {
        RewardModel::linear_from_projection(4, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0])
            .unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 2,
            batch_size: 4,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sweep_has_thirty_one_rows_and_reproducible_baseline() {
        let s = split_of(40);
        let inf = table(s.train.ids(), (0..40).map(|i| (i as f64 * 0.37).sin()).collect());
        let gs = table(s.train.ids(), (0..40).map(|i| (i as f64 * 0.11).cos()).collect());
        let ck = tiny_checkpoint();
        let before = crate::model::checkpoint_id(&ck).unwrap();
        let scores = SweepScores {
            influence: Some(&inf),
            gradient_similarity: Some(&gs),
        };
        let cells = sweep(&ck, &s, scores, &SweepConfig::default(), &quick()).unwrap();
        assert_eq!(cells.len(), 31);
        assert!(cells.iter().all(|c| c.outcome.is_ok()));
        assert_eq!(crate::model::checkpoint_id(&ck).unwrap(), before);

        let baseline = cells[0].outcome.as_ref().unwrap();
        assert!(cells[0].plan.is_none());
        let direct = evaluate(&train(&ck, &s.train, &quick()).unwrap().model, &s.test).unwrap();
        assert_eq!(baseline.accuracy, direct);
        let again = sweep(&ck, &s, scores, &SweepConfig::default(), &quick()).unwrap();
        assert_eq!(again, cells);

        for c in &cells[1..] {
            let p = c.plan.unwrap();
            let r = c.outcome.as_ref().unwrap();
            assert_eq!(r.pruned_ids.len(), p.removal_count(40));
            assert_eq!(r.retained_count, 40 - p.removal_count(40));
        }
        // Random rows agree across directions.
        let random: Vec<_> = cells.iter().filter(|c| c.plan.is_some_and(|p| p.strategy == Strategy::Random)).collect();
        assert_eq!(random.len(), 10);
        for (h, l) in random[..5].iter().zip(&random[5..]) {
            assert_eq!(h.outcome.as_ref().unwrap().pruned_ids, l.outcome.as_ref().unwrap().pruned_ids);
            assert_eq!(h.outcome.as_ref().unwrap().accuracy, l.outcome.as_ref().unwrap().accuracy);
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&cells, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("strategy,direction,fraction,accuracy,wald_half_width,n,retained_count,seed,error")
        );
        assert!(lines.next().unwrap().starts_with("none,none,0.0,"));
        assert_eq!(text.lines().count(), 32);
    }

    #[test]
    fn failed_cells_are_recorded() {
        let s = split_of(10);
        let ck = tiny_checkpoint();
        let cfg = SweepConfig {
            fractions: vec![99.0],
            ..SweepConfig::default()
        };
        let cells = sweep(&ck, &s, SweepScores { influence: None, gradient_similarity: None }, &cfg, &quick()).unwrap();
        assert_eq!(cells.len(), 3);
        assert!(cells[0].outcome.is_ok());
        assert!(cells[1].outcome.as_ref().unwrap_err().contains("random/drop_most_harmful/99%"));
    }

    #[test]
    fn repeats_vary_the_training_seed() {
        let s = split_of(10);
        let cfg = SweepConfig {
            fractions: vec![10.0],
            repeats: 2,
            ..SweepConfig::default()
        };
        let cells = sweep(&tiny_checkpoint(), &s, SweepScores { influence: None, gradient_similarity: None }, &cfg, &quick()).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells.iter().map(|c| c.train_seed).collect::<Vec<_>>(), vec![5, 5, 5, 6, 6, 6]);
    }

    proptest! {
        #[test]
        fn removed_sets_are_nested_and_exact(
            means in prop::collection::vec(-1.0..1.0f64, 5..60),
            helpful in any::<bool>(),
        ) {
            let n = means.len() as u64;
            let s = split_of(n);
            let ranking = rank(&table(s.train.ids(), means));
            let direction = if helpful { Direction::DropMostHelpful } else { Direction::DropMostHarmful };
            let mut prev: HashSet<u64> = HashSet::new();
            for &f in &DEFAULT_FRACTIONS {
                let p = plan(Strategy::Influence, direction, f);
                let pr = prune(&s, &ranking, &p).unwrap();
                let removed: HashSet<u64> = pr.removed.iter().copied().collect();
                prop_assert_eq!(removed.len(), p.removal_count(n as usize));
                prop_assert!(prev.is_subset(&removed));
                let kept: HashSet<u64> = pr.split.train.ids().into_iter().collect();
                prop_assert!(kept.is_disjoint(&removed));
                prop_assert_eq!(kept.len() + removed.len(), n as usize);
                prev = removed;
            }
        }
    }
}
