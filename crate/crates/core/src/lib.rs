//! Influence-function curation of pairwise preference data.
//!
//! The crate scores every training pair of a Bradley–Terry reward model by
//! its influence on validation loss, computed with conjugate-gradient
//! inverse-Hessian-vector products restricted to the trainable adapter
//! subspace, then prunes the training set, retrains from the original
//! checkpoint and evaluates the result.
//!
//! | module | what it holds |
//! |---|---|
//! | [`autodiff`] | matrix tape, exact Hessian-vector products, damped batch operator |
//! | [`model`] | linear and tiny-transformer reward models with low-rank adapters, AdamW training, evaluation |
//! | [`data`] | preference pairs, tokenizer, loading, length filter, splits, synthetic noisy data |
//! | [`influence`] | CG solver, influence and gradient-similarity score tables |
//! | [`curation`] | ranking, pruning, retraining sweeps |
//! | [`analysis`] | Spearman, top/bottom-k overlap, leave-one-out oracle |
//! | [`cli`] | the `influence-prune` pipeline commands and run manifest |

pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod curation;
pub mod data;
pub mod error;
pub mod influence;
pub mod model;
mod rng;

pub use error::{Error, Result};
