//! Fine-tunes the adapters of a small transformer reward model on synthetic
//! preferences and reports held-out accuracy.
//!
//! cargo run --release --example train_reward_model

use influence_prune::data::{split, synthesize, SplitConfig, SynthConfig};
use influence_prune::model::{evaluate, train, Architecture, LinearConfig, RewardModel, TrainConfig, TransformerConfig};

fn main() -> influence_prune::Result<()> {
    let truth = RewardModel::random_linear(LinearConfig { vocab_size: 4096, features: 16 }, 5)?;
    let data = synthesize(&SynthConfig { n: 600, noise_rate: 0.1, seed: 5, vocab: 32, ..SynthConfig::default() }, &truth)?;
    let parts = split(&data, &SplitConfig { seed: 5, ..SplitConfig::default() })?;

    let config = TransformerConfig { width: 32, ffn_width: 64, ..TransformerConfig::default() };
    let model = RewardModel::new(Architecture::Transformer(config), 0)?;
    println!(
        "{} trainable of {} parameters ({:.2}%)",
        model.num_trainable(),
        model.num_total(),
        100.0 * model.trainable_fraction()
    );
    println!("before: test accuracy {:.4}", evaluate(&model, &parts.test)?.accuracy);

    let tc = TrainConfig { learning_rate: 1e-3, epochs: 8, ..TrainConfig::default() };
    let out = train(&model, &parts.train, &tc)?;
    for s in out.loss_curve.iter().step_by(8) {
        println!("step {:>3}  lr {:.2e}  loss {:.4}", s.step, s.learning_rate, s.loss);
    }
    let r = evaluate(&out.model, &parts.test)?;
    println!("after: test accuracy {:.4} ± {:.4} (n = {})", r.accuracy, r.wald_half_width, r.n);
    Ok(())
}
