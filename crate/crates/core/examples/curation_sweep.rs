//! Prune by influence, gradient similarity and at random, retrain from the
//! initial checkpoint, and compare test accuracy.
//!
//! cargo run --release --example curation_sweep

use influence_prune::curation::{sweep, SweepConfig, SweepScores};
use influence_prune::data::{split, synthesize, SplitConfig, SynthConfig};
use influence_prune::influence::{gradient_similarity_matrix, influence_matrix, CgConfig, HvpMode, ScoreOptions};
use influence_prune::model::{train, Architecture, LinearConfig, RewardModel, TrainConfig};

fn main() -> influence_prune::Result<()> {
    let truth = RewardModel::random_linear(LinearConfig { vocab_size: 4096, features: 16 }, 7)?;
    let data = synthesize(&SynthConfig { n: 1000, seed: 7, vocab: 32, ..SynthConfig::default() }, &truth)?;
    let parts = split(&data, &SplitConfig { seed: 7, ..SplitConfig::default() })?;
    let init = RewardModel::new(Architecture::Linear(LinearConfig::default()), 0)?;
    let tc = TrainConfig { learning_rate: 0.5, epochs: 10, ..TrainConfig::default() };
    let model = train(&init, &parts.train, &tc)?.model;

    let cg = CgConfig { hvp_mode: HvpMode::Deterministic, max_iters: 32, ..CgConfig::default() };
    let influence = influence_matrix(&model, &parts, &cg, &ScoreOptions::default())?;
    let similarity = gradient_similarity_matrix(&model, &parts, &ScoreOptions::default())?;
    let cells = sweep(
        &init,
        &parts,
        SweepScores { influence: Some(&influence), gradient_similarity: Some(&similarity) },
        &SweepConfig::default(),
        &tc,
    )?;
    for cell in &cells {
        let name = cell.plan.map_or("baseline".to_string(), |p| p.to_string());
        match &cell.outcome {
            Ok(r) => println!("{name:<40} {:.4} ± {:.4}", r.accuracy.accuracy, r.accuracy.wald_half_width),
            Err(e) => println!("{name:<40} failed: {e}"),
        }
    }
    Ok(())
}
