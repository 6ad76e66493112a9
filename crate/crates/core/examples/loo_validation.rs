//! Compares mean influence against exact leave-one-out retraining on a
//! convex Bradley-Terry model.
//!
//! cargo run --release --example loo_validation

use influence_prune::analysis::{loo_oracle, spearman, ConvexFitConfig};
use influence_prune::curation::rank;
use influence_prune::data::{split, synthesize, SplitConfig, SynthConfig};
use influence_prune::influence::{influence_matrix, CgConfig, HvpMode, ScoreOptions, Tolerance};
use influence_prune::model::{Architecture, LinearConfig, RewardModel};

fn main() -> influence_prune::Result<()> {
    let truth = RewardModel::random_linear(LinearConfig { vocab_size: 4096, features: 16 }, 3)?;
    let data = synthesize(&SynthConfig { n: 160, seed: 3, vocab: 32, ..SynthConfig::default() }, &truth)?;
    let parts = split(&data, &SplitConfig { val_size: 20, test_fraction: 0.0, seed: 3 })?;
    let fit = ConvexFitConfig::default();
    let student = RewardModel::new(Architecture::Linear(LinearConfig { vocab_size: 4096, features: 8 }), 0)?;
    let loo = loo_oracle(&student, &parts, &fit)?;

    let cg = CgConfig {
        damping: fit.l2,
        max_iters: student.num_trainable(),
        tolerance: Tolerance::Relative(1e-10),
        hvp_mode: HvpMode::Deterministic,
        ..CgConfig::default()
    };
    let table = influence_matrix(&loo.full_model, &parts, &cg, &ScoreOptions::default())?;
    let n = parts.train.len() as f64;
    let mut by_delta = loo.delta_by_id();
    println!("{:>5} {:>12} {:>12}", "pair", "influence/n", "loo delta");
    for ((id, delta), (_, mean)) in by_delta.iter().zip(table.mean_by_id()).take(10) {
        println!("{id:>5} {:>12.3e} {delta:>12.3e}", mean / n);
    }
    by_delta.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let oracle: Vec<u64> = by_delta.iter().map(|(id, _)| *id).collect();
    println!("spearman over {} pairs: {:.4}", oracle.len(), spearman(&rank(&table), &oracle)?);
    Ok(())
}
