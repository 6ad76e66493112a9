//! JSON checkpoint container.
//!
//! ```text
//! {"format_version":1,"architecture":{...},"seed":7,"base":{...},"trainable":[...]}
//! ```
//!
//! `base` holds every frozen weight; `trainable` is the adapter (and head)
//! vector in [`RewardModel::layout`] order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, Base, RewardModel};
use crate::autodiff::ParameterVector;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub seed: u64,
    pub base: Base,
    pub trainable: ParameterVector,
}

impl From<&RewardModel> for Checkpoint {
    fn from(m: &RewardModel) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: m.architecture(),
            seed: m.seed,
            base: m.base.clone(),
            trainable: m.trainable().clone(),
        }
    }
}

impl TryFrom<Checkpoint> for RewardModel {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format version {}",
                c.format_version
            )));
        }
        let model = RewardModel {
            seed: c.seed,
            base: c.base,
            trainable: ParameterVector::zeros(0),
        };
        if model.architecture() != c.architecture {
            return Err(Error::invalid("checkpoint architecture does not match its weights"));
        }
        let expected: usize = model
            .layout()
            .iter()
            .map(|b| b.rows * b.cols)
            .sum();
        if c.trainable.len() != expected {
            return Err(Error::invalid(format!(
                "checkpoint has {} trainable values, architecture needs {expected}",
                c.trainable.len()
            )));
        }
        Ok(RewardModel {
            trainable: c.trainable,
            ..model
        })
    }
}

/// Hex SHA-256 of the serialized checkpoint; identifies the weights a score
/// table was computed against.
pub fn checkpoint_id(model: &RewardModel) -> Result<String> {
    let bytes = serde_json::to_vec(&Checkpoint::from(model))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn save_checkpoint(model: &RewardModel, path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec(&Checkpoint::from(model))?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<RewardModel> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    RewardModel::try_from(ckpt)
}
