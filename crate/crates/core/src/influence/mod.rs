//! Influence of training pairs on validation loss, restricted to the
//! trainable subspace.
//!
//! For each validation example `z_j` the damped system `(H + λI) x_j = g_j`
//! is solved by [`cg_solve`]; the score of training example `z_i` is
//! `-⟨x_j, g_i⟩`. Positive scores mark examples whose up-weighting raises
//! validation loss.

mod cg;
mod matrix;
mod table;

pub use cg::{cg_solve, CgConfig, CgReport, ExitReason, HvpMode, Tolerance};
pub use matrix::{
    gradient_similarity_matrix, gradient_similarity_scores, influence_matrix, influence_scores,
    Counters, ScoreOptions,
};
pub use table::{Method, ScoreMetadata, ScoreTable};

use crate::autodiff::ParameterVector;
use crate::error::Result;

/// `-⟨x, g⟩`.
pub fn influence_pair(x: &ParameterVector, g: &ParameterVector) -> Result<f64> {
    Ok(-x.try_dot(g)?)
}
