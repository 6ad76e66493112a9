//! Pairwise preference data: records, tokenization, filtering, splits and
//! synthetic noisy datasets.
//!
//! Input files are JSON lines with `chosen` and `rejected` text fields.
//! Prepared datasets are JSON lines of token ids:
//!
//! ```text
//! {"id":0,"chosen":[17,4051,9],"rejected":[3,3],"noise_flag":null}
//! ```

mod io;
mod split;
mod synth;
mod tokenizer;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use io::{load, read_jsonl, write_jsonl};
pub use split::{split, DatasetSplit, SplitConfig};
pub use synth::{synthesize, SynthConfig};
pub use tokenizer::HashTokenizer;

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: u64,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
    /// Synthetic data only: `Some(true)` iff the label was deliberately flipped.
    #[serde(default)]
    pub noise_flag: Option<bool>,
}

impl PreferencePair {
    pub fn new(id: u64, chosen: Vec<TokenId>, rejected: Vec<TokenId>) -> Self {
        PreferencePair {
            id,
            chosen,
            rejected,
            noise_flag: None,
        }
    }

    pub fn is_flipped(&self) -> bool {
        self.noise_flag == Some(true)
    }
}

/// An ordered collection of pairs with unique ids and nonempty sequences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pairs: Vec<PreferencePair>,
}

impl Dataset {
    pub fn new(pairs: Vec<PreferencePair>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if !seen.insert(p.id) {
                return Err(Error::invalid(format!("duplicate pair id {}", p.id)));
            }
            if p.chosen.is_empty() || p.rejected.is_empty() {
                return Err(Error::invalid(format!("pair {} has an empty sequence", p.id)));
            }
        }
        Ok(Dataset { pairs })
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.pairs.iter().map(|p| p.id).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PreferencePair> {
        self.pairs.iter()
    }

    pub fn into_pairs(self) -> Vec<PreferencePair> {
        self.pairs
    }

    /// Pairs whose id is not in `removed`, order preserved.
    pub fn without(&self, removed: &HashSet<u64>) -> Dataset {
        Dataset {
            pairs: self
                .pairs
                .iter()
                .filter(|p| !removed.contains(&p.id))
                .cloned()
                .collect(),
        }
    }

    pub fn flipped_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_flipped()).count()
    }

    /// Largest token id in the dataset, if any.
    pub fn max_token(&self) -> Option<TokenId> {
        self.pairs
            .iter()
            .flat_map(|p| p.chosen.iter().chain(&p.rejected))
            .copied()
            .max()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a PreferencePair;
    type IntoIter = std::slice::Iter<'a, PreferencePair>;
    fn into_iter(self) -> Self::IntoIter {
        self.pairs.iter()
    }
}

/// Keeps a pair unless *both* sequences are longer than `max_tokens`.
pub fn length_filter(dataset: &Dataset, max_tokens: usize) -> Result<Dataset> {
    if max_tokens == 0 {
        return Err(Error::invalid("max_tokens must be at least 1"));
    }
    Ok(Dataset {
        pairs: dataset
            .pairs
            .iter()
            .filter(|p| p.chosen.len().min(p.rejected.len()) <= max_tokens)
            .cloned()
            .collect(),
    })
}

/// `round(x)` with halves rounded up, for non-negative `x`.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}
