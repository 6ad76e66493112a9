//! Influence table for a trained reward model, written as CSV plus a JSON
//! sidecar, with the most harmful and most helpful training pairs.
//!
//! cargo run --release --example influence_scores -- [output_dir]

use std::path::PathBuf;

use influence_prune::curation::rank;
use influence_prune::data::{split, synthesize, SplitConfig, SynthConfig};
use influence_prune::influence::{influence_matrix, CgConfig, ScoreOptions};
use influence_prune::model::{train, Architecture, LinearConfig, RewardModel, TrainConfig};

fn main() -> influence_prune::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "influence_example".into()));
    std::fs::create_dir_all(&out).map_err(|e| influence_prune::Error::io("creating output directory", e))?;

    let truth = RewardModel::random_linear(LinearConfig { vocab_size: 4096, features: 16 }, 11)?;
    let data = synthesize(&SynthConfig { n: 800, seed: 11, vocab: 32, ..SynthConfig::default() }, &truth)?;
    let parts = split(&data, &SplitConfig { val_size: 50, seed: 11, ..SplitConfig::default() })?;
    let init = RewardModel::new(Architecture::Linear(LinearConfig::default()), 0)?;
    let model = train(&init, &parts.train, &TrainConfig { learning_rate: 0.5, epochs: 10, ..TrainConfig::default() })?.model;

    // Reference settings: λ = 1e-2, K = 10, stochastic batches of 20.
    let table = influence_matrix(&model, &parts, &CgConfig::default(), &ScoreOptions { shards: 4 })?;
    table.save(&out.join("influence.csv"), &out.join("influence.json"))?;

    let means: std::collections::HashMap<u64, f64> = table.mean_by_id().into_iter().collect();
    let flipped = |id: u64| parts.train.iter().find(|p| p.id == id).is_some_and(|p| p.is_flipped());
    let ranking = rank(&table);
    println!("most harmful (positive mean influence):");
    for id in &ranking[..5] {
        println!("  pair {id:>4}  {:+.3e}  flipped: {}", means[id], flipped(*id));
    }
    println!("most helpful:");
    for id in ranking.iter().rev().take(5) {
        println!("  pair {id:>4}  {:+.3e}  flipped: {}", means[id], flipped(*id));
    }
    println!("{} HVPs, tables in {}", table.metadata.hvp_applications, out.display());
    Ok(())
}
