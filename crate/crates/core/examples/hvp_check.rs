//! Exact Hessian-vector products on a small adapter transformer, checked
//! against central differences of the gradient.
//!
//! cargo run --release --example hvp_check

use influence_prune::autodiff::{gradient, HvpOperator, Objective, ParameterVector};
use influence_prune::data::{synthesize, SynthConfig};
use influence_prune::model::{Architecture, LinearConfig, PairObjective, RewardModel, TransformerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> influence_prune::Result<()> {
    let config = TransformerConfig {
        vocab_size: 64,
        width: 8,
        layers: 1,
        heads: 2,
        ffn_width: 16,
        rank: 2,
        alpha: 4.0,
        dropout: 0.0,
        train_head: true,
    };
    let model = RewardModel::new(Architecture::Transformer(config), 1)?;
    let d = model.num_trainable();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let point: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let model = model.with_trainable(point.into())?;

    let truth = RewardModel::random_linear(LinearConfig { vocab_size: 64, features: 4 }, 1)?;
    let data = synthesize(&SynthConfig { n: 8, vocab: 64, ..SynthConfig::default() }, &truth)?;
    let objective = PairObjective::new(&model, data.pairs())?;
    let theta = model.trainable().clone();
    let op = HvpOperator::full_batch(&objective, theta.clone(), 0.0)?;

    let mean_grad = |t: &ParameterVector| -> ParameterVector {
        let mut acc = ParameterVector::zeros(d);
        for i in 0..objective.len() {
            acc.axpy(1.0 / objective.len() as f64, &gradient(&objective, t, i).unwrap());
        }
        acc
    };

    println!("trainable dimension {d} of {}", model.num_total());
    for trial in 0..3 {
        let v = ParameterVector::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let exact = op.apply(&v, 0)?;
        for h in [1e-2, 1e-3, 1e-4] {
            let mut plus = theta.clone();
            plus.axpy(h, &v);
            let mut minus = theta.clone();
            minus.axpy(-h, &v);
            let mut fd = mean_grad(&plus);
            fd.axpy(-1.0, &mean_grad(&minus));
            let fd = fd.scaled(0.5 / h);
            let mut diff = exact.clone();
            diff.axpy(-1.0, &fd);
            println!("probe {trial}, h = {h:.0e}: relative difference {:.2e}", diff.norm() / exact.norm());
        }
    }
    Ok(())
}
