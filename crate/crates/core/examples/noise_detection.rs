//! Plants label noise in synthetic preferences and checks whether the most
//! harmful examples by influence are the flipped ones.
//!
//! cargo run --release --example noise_detection -- [n] [noise] [seed] [lr] [epochs] [val_size]
//!
//! Also reports how well plain training loss finds the flipped pairs, and
//! what removing exactly the flipped pairs would buy.

use std::collections::HashSet;

use influence_prune::curation::rank;
use influence_prune::data::{split, synthesize, SplitConfig, SynthConfig};
use influence_prune::influence::{influence_matrix, CgConfig, HvpMode, ScoreOptions};
use influence_prune::model::{bt_loss, evaluate, train, Architecture, LinearConfig, RewardModel, TrainConfig};

fn main() -> influence_prune::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(2000, |s| s.parse().unwrap());
    let noise: f64 = args.get(1).map_or(0.25, |s| s.parse().unwrap());
    let seed: u64 = args.get(2).map_or(7, |s| s.parse().unwrap());

    let config = LinearConfig { vocab_size: 4096, features: 32 };
    let truth = RewardModel::random_linear(LinearConfig { vocab_size: 4096, features: 16 }, seed)?;
    let data = synthesize(&SynthConfig { n, noise_rate: noise, seed, vocab: 32, ..SynthConfig::default() }, &truth)?;
    let val_size: usize = args.get(5).map_or(100, |s| s.parse().unwrap());
    let parts = split(&data, &SplitConfig { seed, val_size, ..SplitConfig::default() })?;
    let init = RewardModel::new(Architecture::Linear(config), 0)?;
    let lr: f64 = args.get(3).map_or(0.5, |s| s.parse().unwrap());
    let epochs: usize = args.get(4).map_or(10, |s| s.parse().unwrap());
    let tc = TrainConfig { learning_rate: lr, epochs, ..TrainConfig::default() };

    let trained = train(&init, &parts.train, &tc)?.model;
    let base = evaluate(&trained, &parts.test)?;
    println!("train {} pairs, {} flipped; baseline test accuracy {:.4}", parts.train.len(), parts.train.flipped_count(), base.accuracy);

    let cg = CgConfig { hvp_mode: HvpMode::Deterministic, max_iters: 32, ..CgConfig::default() };
    let table = influence_matrix(&trained, &parts, &cg, &ScoreOptions::default())?;
    let ranking = rank(&table);
    let flipped: HashSet<u64> = parts.train.iter().filter(|p| p.is_flipped()).map(|p| p.id).collect();

    let mut by_loss: Vec<(f64, u64)> = parts.train.iter().map(|p| (bt_loss(&trained, p).unwrap(), p.id)).collect();
    by_loss.sort_by(|a, b| b.0.total_cmp(&a.0));
    let k = ranking.len() / 10;
    let hits = by_loss[..k].iter().filter(|(_, id)| flipped.contains(id)).count();
    println!("top 10% by training loss: precision {:.3}", hits as f64 / k as f64);
    for pct in [10.0, 25.0] {
        let k = (ranking.len() as f64 * pct / 100.0).round() as usize;
        let head: HashSet<u64> = ranking[..k].iter().copied().collect();
        let hits = head.intersection(&flipped).count();
        let kept = parts.train.without(&head);
        let acc = evaluate(&train(&init, &kept, &tc)?.model, &parts.test)?.accuracy;
        println!("top {pct}% harmful: precision {:.3}, retrained accuracy {acc:.4}", hits as f64 / k as f64);
    }
    let clean = parts.train.without(&flipped);
    let acc = evaluate(&train(&init, &clean, &tc)?.model, &parts.test)?.accuracy;
    println!("all flipped pairs removed: retrained accuracy {acc:.4}");
    Ok(())
}
