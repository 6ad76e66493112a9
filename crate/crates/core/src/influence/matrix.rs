use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::{cg_solve, influence_pair, CgConfig, CgReport, Method, ScoreMetadata, ScoreTable};
use crate::autodiff::{gradient, Objective, ParameterVector};
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::{checkpoint_id, PairObjective, RewardModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Training examples are split into this many contiguous shards whose
    /// rows are concatenated in shard order.
    pub shards: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions { shards: 1 }
    }
}

/// Work counters; safe to share across threads.
#[derive(Debug, Default)]
pub struct Counters {
    train_gradients: AtomicUsize,
    val_gradients: AtomicUsize,
    hvp_applications: AtomicUsize,
}

impl Counters {
    pub fn train_gradients(&self) -> usize {
        self.train_gradients.load(Ordering::Relaxed)
    }

    pub fn val_gradients(&self) -> usize {
        self.val_gradients.load(Ordering::Relaxed)
    }

    pub fn hvp_applications(&self) -> usize {
        self.hvp_applications.load(Ordering::Relaxed)
    }
}

fn metadata(method: Method, cg: Option<CgConfig>, reports: Vec<CgReport>, counters: &Counters) -> ScoreMetadata {
    ScoreMetadata {
        method,
        cg,
        cg_reports: reports,
        checkpoint_id: String::new(),
        model_seed: None,
        split_seed: None,
        train_gradient_evaluations: counters.train_gradients(),
        hvp_applications: counters.hvp_applications(),
    }
}

fn at_val<O: Objective>(val: &O, j: usize) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::AtValidation {
        val_id: val.example_id(j),
        source: Box::new(e),
    }
}

fn check_dims<O: Objective>(train: &O, val: &O, point: &ParameterVector) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("influence needs nonempty train and validation sets"));
    }
    if train.dim() != val.dim() || point.len() != train.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: train {}, validation {}, point {}",
            train.dim(),
            val.dim(),
            point.len()
        )));
    }
    Ok(())
}

/// Scores every training example against the given per-validation vectors.
///
/// Each training gradient is computed exactly once.
fn score_rows<O: Objective>(
    train: &O,
    point: &ParameterVector,
    columns: &[ParameterVector],
    options: &ScoreOptions,
    counters: &Counters,
) -> Result<Vec<f64>> {
    if options.shards == 0 {
        return Err(Error::invalid("shard count must be at least 1"));
    }
    let n = train.len();
    let shards = options.shards;
    let bounds: Vec<(usize, usize)> = (0..shards)
        .map(|s| (s * n / shards, (s + 1) * n / shards))
        .collect();
    let parts = bounds
        .par_iter()
        .map(|&(lo, hi)| {
            (lo..hi)
                .into_par_iter()
                .map(|i| {
                    let g = gradient(train, point, i)?;
                    counters.train_gradients.fetch_add(1, Ordering::Relaxed);
                    columns
                        .iter()
                        .map(|x| influence_pair(x, &g))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().flatten().collect())
}

fn val_gradient<O: Objective>(
    val: &O,
    point: &ParameterVector,
    j: usize,
    counters: &Counters,
) -> Result<ParameterVector> {
    let g = gradient(val, point, j)?;
    counters.val_gradients.fetch_add(1, Ordering::Relaxed);
    Ok(g)
}

/// `I[i][j] = -⟨x_j, g_i⟩` with `x_j` the CG solution of
/// `(H_train + λI) x = ∇L(z_j)` at `point`.
///
/// Validation columns are solved in parallel; a stochastic operator for
/// column `j` samples from the stream keyed by that example's id.
pub fn influence_scores<O: Objective>(
    train: &O,
    val: &O,
    point: &ParameterVector,
    config: &CgConfig,
    options: &ScoreOptions,
    counters: &Counters,
) -> Result<ScoreTable> {
    config.validate()?;
    check_dims(train, val, point)?;
    let solved = (0..val.len())
        .into_par_iter()
        .map(|j| {
            let g = val_gradient(val, point, j, counters).map_err(at_val(val, j))?;
            let op = config
                .operator(train, point.clone())?
                .with_stream(val.example_id(j));
            let out = cg_solve(&op, &g, config).map_err(at_val(val, j));
            counters
                .hvp_applications
                .fetch_add(op.applications(), Ordering::Relaxed);
            out
        })
        .collect::<Result<Vec<_>>>()?;
    let (columns, reports): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    let scores = score_rows(train, point, &columns, options, counters)?;
    ScoreTable::new(
        (0..train.len()).map(|i| train.example_id(i)).collect(),
        (0..val.len()).map(|j| val.example_id(j)).collect(),
        scores,
        metadata(Method::Influence, Some(*config), reports, counters),
    )
}

/// `I[i][j] = -⟨g_j, g_i⟩`.
pub fn gradient_similarity_scores<O: Objective>(
    train: &O,
    val: &O,
    point: &ParameterVector,
    options: &ScoreOptions,
    counters: &Counters,
) -> Result<ScoreTable> {
    check_dims(train, val, point)?;
    let columns = (0..val.len())
        .into_par_iter()
        .map(|j| val_gradient(val, point, j, counters).map_err(at_val(val, j)))
        .collect::<Result<Vec<_>>>()?;
    let scores = score_rows(train, point, &columns, options, counters)?;
    ScoreTable::new(
        (0..train.len()).map(|i| train.example_id(i)).collect(),
        (0..val.len()).map(|j| val.example_id(j)).collect(),
        scores,
        metadata(Method::GradientSimilarity, None, vec![], counters),
    )
}

fn with_provenance(mut table: ScoreTable, model: &RewardModel, split: &DatasetSplit) -> Result<ScoreTable> {
    table.metadata.checkpoint_id = checkpoint_id(model)?;
    table.metadata.model_seed = Some(model.seed);
    table.metadata.split_seed = Some(split.split_seed);
    Ok(table)
}

/// Influence of every training pair on every validation pair for a trained
/// model, evaluated with dropout disabled.
pub fn influence_matrix(
    model: &RewardModel,
    split: &DatasetSplit,
    config: &CgConfig,
    options: &ScoreOptions,
) -> Result<ScoreTable> {
    let train = PairObjective::new(model, split.train.pairs())?;
    let val = PairObjective::new(model, split.val.pairs())?;
    let table = influence_scores(
        &train,
        &val,
        model.trainable(),
        config,
        options,
        &Counters::default(),
    )?;
    with_provenance(table, model, split)
}

pub fn gradient_similarity_matrix(
    model: &RewardModel,
    split: &DatasetSplit,
    options: &ScoreOptions,
) -> Result<ScoreTable> {
    let train = PairObjective::new(model, split.train.pairs())?;
    let val = PairObjective::new(model, split.val.pairs())?;
    let table = gradient_similarity_scores(&train, &val, model.trainable(), options, &Counters::default())?;
    with_provenance(table, model, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::testing::{Linear, Quadratic};
    use crate::autodiff::Curvature;
    use crate::data::{split, Dataset, PreferencePair, SplitConfig};
    use crate::influence::{HvpMode, Tolerance};
    use crate::model::{Architecture, LinearConfig};

    fn small_split(n: u64) -> (RewardModel, DatasetSplit) {
        let m = RewardModel::new(
            Architecture::Linear(LinearConfig {
                vocab_size: 16,
                features: 5,
            }),
            3,
        )
        .unwrap();
        let m = m.with_trainable(vec![0.3, -0.2, 0.1, 0.5, -0.4].into()).unwrap();
        let ds = Dataset::new(
            (0..n)
                .map(|i| {
                    PreferencePair::new(
                        i,
                        vec![(i % 16) as u32, ((i * 3) % 16) as u32],
                        vec![((i * 5 + 1) % 16) as u32],
                    )
                })
                .collect(),
        )
        .unwrap();
        let s = split(
            &ds,
            &SplitConfig {
                val_size: 4,
                test_fraction: 0.2,
                seed: 1,
            },
        )
        .unwrap();
        (m, s)
    }

    fn deterministic() -> CgConfig {
        CgConfig {
            hvp_mode: HvpMode::Deterministic,
            max_iters: 5,
            ..CgConfig::default()
        }
    }

    #[test]
    fn single_entry_reduces_to_gradient_similarity() {
        let train = Linear {
            rows: vec![vec![0.5, -2.0, 1.0]],
        };
        let val = Linear {
            rows: vec![vec![3.0, 1.0, -1.0]],
        };
        let point = ParameterVector::new(vec![2.0, -1.0, 0.0]);
        let cfg = CgConfig {
            damping: 1.0,
            ..deterministic()
        };
        let c = Counters::default();
        let t = influence_scores(&train, &val, &point, &cfg, &ScoreOptions::default(), &c).unwrap();
        assert_eq!(t.scores(), &[-(1.5 - 2.0 - 1.0)]);
        assert_eq!((t.train_ids(), t.val_ids()), (&[100u64][..], &[100u64][..]));
        let gs = gradient_similarity_scores(&train, &val, &point, &ScoreOptions::default(), &c).unwrap();
        assert_eq!(t.scores(), gs.scores());
    }

    #[test]
    fn orthogonal_and_equal_gradients() {
        let train = Linear {
            rows: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
        };
        let val = Linear {
            rows: vec![vec![0.0, 2.0]],
        };
        let gs = gradient_similarity_scores(
            &train,
            &val,
            &ParameterVector::zeros(2),
            &ScoreOptions::default(),
            &Counters::default(),
        )
        .unwrap();
        assert_eq!(gs.scores(), &[0.0, -4.0]);
    }

    #[test]
    fn zero_curvature_unit_damping_matches_gradient_similarity() {
        let (m, s) = small_split(40);
        let cfg = CgConfig {
            damping: 1.0,
            curvature: Curvature::Zero,
            ..deterministic()
        };
        let inf = influence_matrix(&m, &s, &cfg, &ScoreOptions::default()).unwrap();
        let gs = gradient_similarity_matrix(&m, &s, &ScoreOptions::default()).unwrap();
        for (a, b) in inf.scores().iter().zip(gs.scores()) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
        assert_eq!(inf.train_ids(), gs.train_ids());
        assert_eq!(inf.metadata.checkpoint_id, gs.metadata.checkpoint_id);
    }

    #[test]
    fn each_training_gradient_is_computed_once() {
        let (m, s) = small_split(40);
        let train = PairObjective::new(&m, s.train.pairs()).unwrap();
        for val_size in [1, 4] {
            let val = PairObjective::new(&m, &s.val.pairs()[..val_size]).unwrap();
            let c = Counters::default();
            let t = influence_scores(&train, &val, m.trainable(), &deterministic(), &ScoreOptions { shards: 3 }, &c).unwrap();
            assert_eq!(c.train_gradients(), s.train.len());
            assert_eq!(c.val_gradients(), val_size);
            assert_eq!(t.metadata.train_gradient_evaluations, s.train.len());
            assert_eq!(t.val_ids().len(), val_size);
        }
    }

    #[test]
    fn shard_count_does_not_change_the_table() {
        let (m, s) = small_split(60);
        let cfg = CgConfig {
            hvp_mode: HvpMode::Stochastic,
            batch_size: 5,
            seed: 9,
            ..CgConfig::default()
        };
        let base = influence_matrix(&m, &s, &cfg, &ScoreOptions { shards: 1 }).unwrap();
        for shards in [2, 4, 7, 1000] {
            let t = influence_matrix(&m, &s, &cfg, &ScoreOptions { shards }).unwrap();
            assert_eq!(t, base);
        }
    }

    #[test]
    fn curvature_abort_names_the_validation_example() {
        let train = Quadratic {
            a: vec![-4.0],
            dim: 1,
        };
        // Zero validation gradient: CG returns immediately, no curvature seen.
        let val = Quadratic {
            a: vec![0.0],
            dim: 1,
        };
        let val_q = Quadratic {
            a: vec![1.0],
            dim: 1,
        };
        let point = ParameterVector::new(vec![1.0]);
        let err = influence_scores(
            &train,
            &val_q,
            &point,
            &deterministic(),
            &ScoreOptions::default(),
            &Counters::default(),
        )
        .unwrap_err();
        match err {
            Error::AtValidation { val_id: 0, source } => {
                assert!(matches!(*source, Error::Curvature { iteration: 1, .. }))
            }
            other => panic!("unexpected {other}"),
        }
        let ok = influence_scores(
            &train,
            &val,
            &point,
            &deterministic(),
            &ScoreOptions::default(),
            &Counters::default(),
        )
        .unwrap();
        assert_eq!(ok.scores(), &[-0.0]);
    }

    #[test]
    fn metadata_records_configuration() {
        let (m, s) = small_split(30);
        let cfg = CgConfig {
            max_iters: 50,
            tolerance: Tolerance::Absolute(1e-12),
            ..deterministic()
        };
        let t = influence_matrix(&m, &s, &cfg, &ScoreOptions::default()).unwrap();
        assert_eq!(t.metadata.cg, Some(cfg));
        assert_eq!(t.metadata.cg_reports.len(), s.val.len());
        assert_eq!(t.metadata.split_seed, Some(1));
        assert_eq!(t.metadata.method, Method::Influence);
        let total: usize = t.metadata.cg_reports.iter().map(|r| r.iterations).sum();
        assert_eq!(t.metadata.hvp_applications, total);
    }
}
