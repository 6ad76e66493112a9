use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{round_half_up, Dataset, PreferencePair, TokenId};
use crate::error::{Error, Result};
use crate::model::RewardModel;
use crate::rng::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    /// Fraction of pairs whose label is flipped; exactly `round(n · rate)`.
    pub noise_rate: f64,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
    /// Tokens are drawn uniformly from `0..vocab`.
    pub vocab: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 1000,
            noise_rate: 0.25,
            seed: 0,
            min_len: 4,
            max_len: 16,
            vocab: 256,
        }
    }
}

/// Generates pairs ordered by a ground-truth reward model, then flips the
/// labels of a seeded subset of exactly `round(n · noise_rate)` pairs.
///
/// Every pair carries `noise_flag = Some(flipped)`.
pub fn synthesize(config: &SynthConfig, truth: &RewardModel) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&config.noise_rate) {
        return Err(Error::invalid(format!(
            "noise rate must lie in [0, 1], got {}",
            config.noise_rate
        )));
    }
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(Error::invalid("need 1 <= min_len <= max_len"));
    }
    if config.vocab == 0 || config.vocab > truth.vocab_size() {
        return Err(Error::invalid(format!(
            "synthetic vocabulary {} must be within the truth model's {}",
            config.vocab,
            truth.vocab_size()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sequence = |rng: &mut ChaCha8Rng| -> Vec<TokenId> {
        let len = rng.gen_range(config.min_len..=config.max_len);
        (0..len).map(|_| rng.gen_range(0..config.vocab)).collect()
    };

    let n_flip = round_half_up(config.n as f64 * config.noise_rate).min(config.n);
    let mut flip_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0xF11F]));
    let flipped: HashSet<usize> = rand::seq::index::sample(&mut flip_rng, config.n, n_flip)
        .into_iter()
        .collect();

    let mut pairs = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let a = sequence(&mut rng);
        let b = sequence(&mut rng);
        let (ra, rb) = (truth.reward(&a)?, truth.reward(&b)?);
        let (better, worse) = if ra >= rb { (a, b) } else { (b, a) };
        let flip = flipped.contains(&i);
        let (chosen, rejected) = if flip { (worse, better) } else { (better, worse) };
        pairs.push(PreferencePair {
            id: i as u64,
            chosen,
            rejected,
            noise_flag: Some(flip),
        });
    }
    Dataset::new(pairs)
}
