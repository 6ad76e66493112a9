//! Flat `key = value` settings.
//!
//! Every key belongs to the pipeline stage that consumes it. Values resolve
//! from, in increasing priority: built-in defaults, the run manifest, a
//! config file, `--set key=value`, and dedicated flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Prepare,
    Train,
    Influence,
    Similarity,
    Sweep,
    Analyze,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Influence => "influence",
            Stage::Similarity => "similarity",
            Stage::Sweep => "sweep",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }

    /// Stages whose outputs depend on this one's.
    pub fn downstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Prepare => &[Train, Influence, Similarity, Sweep, Analyze, Report],
            Train => &[Influence, Similarity, Sweep, Analyze, Report],
            Influence | Similarity => &[Sweep, Analyze, Report],
            Sweep | Analyze => &[Report],
            Report => &[],
        }
    }
}

/// `(key, owning stage, default)`; an empty default means unset.
pub const KEYS: &[(&str, Stage, &str)] = &[
    ("seed", Stage::Prepare, "0"),
    ("input", Stage::Prepare, ""),
    ("synth_n", Stage::Prepare, "1000"),
    ("noise", Stage::Prepare, "0.25"),
    ("synth_min_len", Stage::Prepare, "4"),
    ("synth_max_len", Stage::Prepare, "16"),
    ("synth_vocab", Stage::Prepare, "32"),
    ("truth_features", Stage::Prepare, "16"),
    ("vocab_size", Stage::Prepare, "4096"),
    ("max_tokens", Stage::Prepare, "24"),
    ("val_size", Stage::Prepare, "100"),
    ("test_fraction", Stage::Prepare, "0.2"),
    ("arch", Stage::Train, "transformer"),
    ("features", Stage::Train, "32"),
    ("width", Stage::Train, "64"),
    ("layers", Stage::Train, "2"),
    ("heads", Stage::Train, "4"),
    ("ffn_width", Stage::Train, "256"),
    ("rank", Stage::Train, "8"),
    ("alpha", Stage::Train, "16"),
    ("dropout", Stage::Train, "0.05"),
    ("train_head", Stage::Train, "true"),
    ("model_seed", Stage::Train, "0"),
    ("lr", Stage::Train, "1e-5"),
    ("epochs", Stage::Train, "3"),
    ("batch_size", Stage::Train, "124"),
    ("beta1", Stage::Train, "0.9"),
    ("beta2", Stage::Train, "0.98"),
    ("adam_eps", Stage::Train, "1e-8"),
    ("weight_decay", Stage::Train, "0"),
    ("train_seed", Stage::Train, "0"),
    ("damping", Stage::Influence, "1e-2"),
    ("cg_iters", Stage::Influence, "10"),
    ("tolerance", Stage::Influence, "1e-4"),
    ("tolerance_kind", Stage::Influence, "relative"),
    ("hvp_batch", Stage::Influence, "20"),
    ("hvp_mode", Stage::Influence, "stochastic"),
    ("cg_seed", Stage::Influence, "0"),
    ("fractions", Stage::Sweep, "5,10,15,20,30"),
    ("random_seed", Stage::Sweep, "0"),
    ("repeats", Stage::Sweep, "1"),
    ("k_percents", Stage::Analyze, "1,5,10,25,50"),
];

pub fn owner(key: &str) -> Option<Stage> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, s, _)| *s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            values: KEYS
                .iter()
                .map(|(k, _, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if owner(key).is_none() {
            return Err(Error::invalid(format!("unknown setting {key:?}")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| Error::invalid(format!("setting {key} = {:?}: {e}", self.raw(key))))
    }

    pub fn list<T>(&self, key: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| Error::invalid(format!("setting {key}: {s:?}: {e}")))
            })
            .collect()
    }

    /// Values owned by `stage`.
    pub fn snapshot(&self, stage: Stage) -> BTreeMap<String, String> {
        KEYS.iter()
            .filter(|(_, s, _)| *s == stage)
            .map(|(k, _, _)| (k.to_string(), self.raw(k).to_string()))
            .collect()
    }

    /// Applies a settings file and returns the keys it assigned.
    pub fn apply_file(&mut self, path: &Path) -> Result<Vec<String>> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut keys = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            keys.extend(line.split_once('=').map(|(k, _)| k.trim().to_string()));
        }
        Ok(keys)
    }
}
