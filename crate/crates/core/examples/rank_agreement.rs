//! How much do influence and plain gradient similarity agree on which
//! training pairs matter?
//!
//! cargo run --release --example rank_agreement

use influence_prune::analysis::{rank_agreement, DEFAULT_K_PERCENTS};
use influence_prune::curation::rank;
use influence_prune::data::{split, synthesize, SplitConfig, SynthConfig};
use influence_prune::influence::{gradient_similarity_matrix, influence_matrix, CgConfig, HvpMode, ScoreOptions};
use influence_prune::model::{train, Architecture, LinearConfig, RewardModel, TrainConfig};

fn main() -> influence_prune::Result<()> {
    let truth = RewardModel::random_linear(LinearConfig { vocab_size: 4096, features: 16 }, 3)?;
    let data = synthesize(&SynthConfig { n: 1000, seed: 3, vocab: 32, ..SynthConfig::default() }, &truth)?;
    let parts = split(&data, &SplitConfig { seed: 3, ..SplitConfig::default() })?;
    let init = RewardModel::new(Architecture::Linear(LinearConfig::default()), 0)?;
    let model = train(&init, &parts.train, &TrainConfig { learning_rate: 0.5, epochs: 10, ..TrainConfig::default() })?.model;
    let similarity = gradient_similarity_matrix(&model, &parts, &ScoreOptions::default())?;

    for damping in [1e-2, 1.0, 1e2] {
        let cg = CgConfig { damping, hvp_mode: HvpMode::Deterministic, max_iters: 32, ..CgConfig::default() };
        let influence = influence_matrix(&model, &parts, &cg, &ScoreOptions::default())?;
        let report = rank_agreement(&rank(&influence), &rank(&similarity), &DEFAULT_K_PERCENTS)?;
        println!("damping {damping:.0e}: spearman {:.4}", report.spearman_rho);
        for p in &report.curve {
            println!("  k = {:>3}: top overlap {:.3}, bottom overlap {:.3}", p.k, p.overlap_top, p.overlap_bottom);
        }
    }
    Ok(())
}
