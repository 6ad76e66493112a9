//! Solving (H + λI) x = g with conjugate gradient, deterministic against
//! stochastic Hessian batches.
//!
//! cargo run --release --example cg_ihvp

use influence_prune::analysis::{fit_convex, ConvexFitConfig};
use influence_prune::autodiff::gradient;
use influence_prune::data::{split, synthesize, SplitConfig, SynthConfig};
use influence_prune::influence::{cg_solve, CgConfig, HvpMode};
use influence_prune::model::{Architecture, LinearConfig, PairObjective, RewardModel};

fn main() -> influence_prune::Result<()> {
    let truth = RewardModel::random_linear(LinearConfig { vocab_size: 4096, features: 16 }, 2)?;
    let data = synthesize(&SynthConfig { n: 600, seed: 2, vocab: 32, ..SynthConfig::default() }, &truth)?;
    let parts = split(&data, &SplitConfig { val_size: 10, seed: 2, ..SplitConfig::default() })?;
    let student = RewardModel::new(Architecture::Linear(LinearConfig::default()), 0)?;
    let model = fit_convex(&student, &parts.train, &ConvexFitConfig::default())?;

    let train = PairObjective::new(&model, parts.train.pairs())?;
    let val = PairObjective::new(&model, parts.val.pairs())?;
    let g = gradient(&val, model.trainable(), 0)?;

    for (mode, iters) in [(HvpMode::Deterministic, 32), (HvpMode::Stochastic, 10), (HvpMode::Stochastic, 32)] {
        let cfg = CgConfig { hvp_mode: mode, max_iters: iters, ..CgConfig::default() };
        let op = cfg.operator(&train, model.trainable().clone())?;
        let (x, report) = cg_solve(&op, &g, &cfg)?;
        println!(
            "{mode:?}, K = {iters}: {} iterations, exit {:?}, residual {:.3e} -> {:.3e}, |x| = {:.4}",
            report.iterations,
            report.exit,
            report.initial_residual,
            report.final_residual,
            x.norm()
        );
    }
    Ok(())
}
