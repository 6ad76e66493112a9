//! Reward models with frozen base weights and a small trainable subspace.
//!
//! Two architectures share one interface:
//!
//! * [`Architecture::Linear`]: a trainable head over frozen random-projection
//!   features of token counts. Convex in the trainable coordinates.
//! * [`Architecture::Transformer`]: a tiny encoder whose `q/k/v/o`
//!   projections carry low-rank adapters `W + (α/r)·BA`; mean-pooled hidden
//!   states feed a scalar head.
//!
//! Trainable coordinates are laid out as described by [`RewardModel::layout`].

mod checkpoint;
mod eval;
mod linear;
mod train;
mod transformer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_id, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION,
};
pub use eval::{evaluate, wald_half_width, write_accuracy_csv, AccuracyReport};
pub use linear::{LinearBase, LinearConfig};
pub use train::{train, write_loss_curve, StepLoss, TrainConfig, TrainOutcome};
pub use transformer::{TransformerBase, TransformerConfig, PROJECTIONS};

use crate::autodiff::{Graph, Objective, ParameterVector, Real, Var};
use crate::data::{PreferencePair, TokenId};
use crate::error::{Error, Result};
use crate::rng::mix_seed;
use transformer::MaskSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear(LinearConfig),
    Transformer(TransformerConfig),
}

impl Architecture {
    pub fn vocab_size(&self) -> u32 {
        match self {
            Architecture::Linear(c) => c.vocab_size,
            Architecture::Transformer(c) => c.vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Base {
    Linear(LinearBase),
    Transformer(TransformerBase),
}

/// One contiguous block of the trainable coordinate vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub seed: u64,
    pub base: Base,
    trainable: ParameterVector,
}

impl RewardModel {
    /// Seeded initialisation: random frozen base, adapters with `B = 0`
    /// (transformer) or a zero head (linear).
    pub fn new(architecture: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match architecture {
            Architecture::Linear(c) => {
                if c.vocab_size == 0 || c.features == 0 {
                    return Err(Error::invalid("linear model needs a vocabulary and features"));
                }
                let base = LinearBase::init(c, &mut rng);
                Ok(RewardModel {
                    seed,
                    trainable: ParameterVector::zeros(c.features),
                    base: Base::Linear(base),
                })
            }
            Architecture::Transformer(c) => {
                if c.vocab_size == 0 || c.width == 0 || c.heads == 0 || c.rank == 0 {
                    return Err(Error::invalid("transformer dimensions must be positive"));
                }
                if c.width % c.heads != 0 {
                    return Err(Error::invalid(format!(
                        "width {} is not divisible by {} heads",
                        c.width, c.heads
                    )));
                }
                if !(0.0..1.0).contains(&c.dropout) {
                    return Err(Error::invalid("adapter dropout must lie in [0, 1)"));
                }
                let base = TransformerBase::init(c, &mut rng);
                let mut coords = base.init_adapters(&mut rng);
                if c.train_head {
                    coords.extend_from_slice(&base.head);
                }
                Ok(RewardModel {
                    seed,
                    trainable: ParameterVector::new(coords),
                    base: Base::Transformer(base),
                })
            }
        }
    }

    /// Linear model over an explicit `vocab × features` projection.
    pub fn linear_from_projection(
        vocab_size: u32,
        features: usize,
        projection: Vec<f64>,
        head: Vec<f64>,
    ) -> Result<Self> {
        if projection.len() != vocab_size as usize * features || head.len() != features {
            return Err(Error::invalid("projection/head shape mismatch"));
        }
        Ok(RewardModel {
            seed: 0,
            base: Base::Linear(LinearBase {
                config: LinearConfig {
                    vocab_size,
                    features,
                },
                projection,
            }),
            trainable: ParameterVector::new(head),
        })
    }

    /// Linear model with a seeded uniform `[-1, 1)` head; a ground truth for
    /// synthetic preferences.
    pub fn random_linear(config: LinearConfig, seed: u64) -> Result<Self> {
        let model = RewardModel::new(Architecture::Linear(config), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x7E4D]));
        let head = (0..config.features).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        model.with_trainable(head.into())
    }

    pub fn architecture(&self) -> Architecture {
        match &self.base {
            Base::Linear(b) => Architecture::Linear(b.config),
            Base::Transformer(b) => Architecture::Transformer(b.config),
        }
    }

    pub fn vocab_size(&self) -> u32 {
        self.architecture().vocab_size()
    }

    pub fn trainable(&self) -> &ParameterVector {
        &self.trainable
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable.len()
    }

    pub fn num_total(&self) -> usize {
        let frozen = match &self.base {
            Base::Linear(b) => b.frozen_count(),
            Base::Transformer(b) => b.frozen_count(),
        };
        frozen + self.num_trainable()
    }

    pub fn trainable_fraction(&self) -> f64 {
        self.num_trainable() as f64 / self.num_total() as f64
    }

    /// Copy with different trainable coordinates; the base is shared by value.
    pub fn with_trainable(&self, coords: ParameterVector) -> Result<Self> {
        if coords.len() != self.num_trainable() {
            return Err(Error::invalid(format!(
                "trainable vector has length {}, model expects {}",
                coords.len(),
                self.num_trainable()
            )));
        }
        Ok(RewardModel {
            seed: self.seed,
            base: self.base.clone(),
            trainable: coords,
        })
    }

    /// Coordinate layout of the trainable vector.
    pub fn layout(&self) -> Vec<ParamBlock> {
        match &self.base {
            Base::Linear(b) => vec![ParamBlock {
                name: "head".into(),
                offset: 0,
                rows: b.config.features,
                cols: 1,
            }],
            Base::Transformer(b) => {
                let c = &b.config;
                let mut out = Vec::new();
                let mut offset = 0;
                for l in 0..c.layers {
                    for p in PROJECTIONS {
                        out.push(ParamBlock {
                            name: format!("layer{l}.{p}.A"),
                            offset,
                            rows: c.rank,
                            cols: c.width,
                        });
                        offset += c.rank * c.width;
                        out.push(ParamBlock {
                            name: format!("layer{l}.{p}.B"),
                            offset,
                            rows: c.width,
                            cols: c.rank,
                        });
                        offset += c.width * c.rank;
                    }
                }
                if c.train_head {
                    out.push(ParamBlock {
                        name: "head".into(),
                        offset,
                        rows: c.width,
                        cols: 1,
                    });
                }
                out
            }
        }
    }

    pub fn validate_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        let vocab = self.vocab_size();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of size {vocab}"
            )));
        }
        Ok(())
    }

    fn bind<S: Real>(&self, g: &mut Graph<S>) -> Bound {
        match &self.base {
            Base::Linear(b) => Bound {
                adapters: None,
                head: g.param(0, b.config.features, 1),
            },
            Base::Transformer(b) => {
                let adapters = b.bind(g);
                let head = if b.config.train_head {
                    g.param(b.adapter_count(), b.config.width, 1)
                } else {
                    g.constant_f64(b.config.width, 1, &b.head)
                };
                Bound {
                    adapters: Some(adapters),
                    head,
                }
            }
        }
    }

    fn record_reward<S: Real>(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        tokens: &[TokenId],
        masks: &mut dyn MaskSource,
    ) -> Var {
        match &self.base {
            Base::Linear(b) => b.record(g, bound.head, tokens),
            Base::Transformer(b) => b.record(g, bound.adapters.as_ref(), bound.head, tokens, masks),
        }
    }

    /// Records `-log σ(r(chosen) - r(rejected))` for `pair` on `g`.
    pub(crate) fn record_pair_loss<S: Real>(
        &self,
        g: &mut Graph<S>,
        pair: &PreferencePair,
        dropout_seed: Option<u64>,
    ) -> Var {
        let bound = self.bind(g);
        let mut masks = self.mask_source(dropout_seed, pair.id);
        let rc = self.record_reward(g, &bound, &pair.chosen, &mut masks);
        let rr = self.record_reward(g, &bound, &pair.rejected, &mut masks);
        let margin = g.sub(rc, rr);
        let ls = g.log_sigmoid(margin);
        g.neg(ls)
    }

    fn mask_source(&self, dropout_seed: Option<u64>, id: u64) -> Dropout {
        let rate = match &self.base {
            Base::Transformer(b) => b.config.dropout,
            Base::Linear(_) => 0.0,
        };
        match dropout_seed {
            Some(seed) if rate > 0.0 => Dropout {
                rate,
                rng: Some(ChaCha8Rng::seed_from_u64(mix_seed(&[seed, id]))),
            },
            _ => Dropout { rate, rng: None },
        }
    }

    /// Scalar reward in evaluation mode (no dropout).
    pub fn reward(&self, tokens: &[TokenId]) -> Result<f64> {
        self.validate_tokens(tokens)?;
        let mut g = Graph::new(self.trainable.as_slice().to_vec());
        let bound = self.bind(&mut g);
        let out = self.record_reward(&mut g, &bound, tokens, &mut Dropout::off());
        let r = g.scalar(out);
        if !r.is_finite() {
            return Err(Error::numerical("non-finite reward"));
        }
        Ok(r)
    }

    /// Reward of the frozen base network: adapters bypassed, initial head.
    pub fn base_reward(&self, tokens: &[TokenId]) -> Result<f64> {
        self.validate_tokens(tokens)?;
        match &self.base {
            Base::Linear(_) => Ok(0.0),
            Base::Transformer(b) => {
                let mut g = Graph::<f64>::new(Vec::new());
                let head = g.constant_f64(b.config.width, 1, &b.head);
                let out = b.record(&mut g, None, head, tokens, &mut Dropout::off());
                Ok(g.scalar(out))
            }
        }
    }
}

struct Bound {
    adapters: Option<transformer::BoundAdapters>,
    head: Var,
}

struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }
}

impl MaskSource for Dropout {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Vec<f64>> {
        let rng = self.rng.as_mut()?;
        let keep = 1.0 / (1.0 - self.rate);
        Some(
            (0..rows * cols)
                .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep })
                .collect(),
        )
    }
}

/// Bradley–Terry loss `-log σ(r(chosen) - r(rejected))` of one pair.
pub fn bt_loss(model: &RewardModel, pair: &PreferencePair) -> Result<f64> {
    model.validate_tokens(&pair.chosen)?;
    model.validate_tokens(&pair.rejected)?;
    let mut g = Graph::new(model.trainable.as_slice().to_vec());
    let out = model.record_pair_loss(&mut g, pair, None);
    let l = g.scalar(out);
    if !l.is_finite() {
        return Err(Error::numerical(format!("non-finite loss on pair {}", pair.id)));
    }
    Ok(l)
}

/// Pairwise loss over a list of pairs as an [`Objective`] on the model's
/// trainable subspace.
pub struct PairObjective<'a> {
    model: &'a RewardModel,
    pairs: &'a [PreferencePair],
    dropout_seed: Option<u64>,
}

impl<'a> PairObjective<'a> {
    /// Evaluation-mode objective: dropout disabled.
    pub fn new(model: &'a RewardModel, pairs: &'a [PreferencePair]) -> Result<Self> {
        for p in pairs {
            model.validate_tokens(&p.chosen)?;
            model.validate_tokens(&p.rejected)?;
        }
        Ok(PairObjective {
            model,
            pairs,
            dropout_seed: None,
        })
    }

    /// Training-mode objective with adapter dropout masks drawn from `seed`.
    pub(crate) fn with_dropout(mut self, seed: u64) -> Self {
        self.dropout_seed = Some(seed);
        self
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        self.pairs
    }
}

impl Objective for PairObjective<'_> {
    fn dim(&self) -> usize {
        self.model.num_trainable()
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn example_id(&self, index: usize) -> u64 {
        self.pairs[index].id
    }

    fn record<S: Real>(&self, graph: &mut Graph<S>, index: usize) -> Result<Var> {
        Ok(self
            .model
            .record_pair_loss(graph, &self.pairs[index], self.dropout_seed))
    }
}
