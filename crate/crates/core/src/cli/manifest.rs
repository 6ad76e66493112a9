use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::settings::{owner, Stage};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the run directory for artifacts; as given for inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub stage: String,
    #[serde(flatten)]
    pub file: FileDigest,
}

/// Everything needed to reproduce the run directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Settings of every stage that has run.
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new() -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            ..RunManifest::default()
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::Manifest(format!(
                "no {MANIFEST_FILE} in {}; run `prepare` first",
                run_dir.display()
            )));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Path of a recorded artifact after checking that the file still has
    /// its recorded digest.
    pub fn require(&self, run_dir: &Path, name: &str) -> Result<PathBuf> {
        let a = self.artifacts.get(name).ok_or_else(|| {
            Error::Manifest(format!("artifact {name:?} is missing; run the stage that produces it"))
        })?;
        let path = run_dir.join(&a.file.path);
        if !path.exists() {
            return Err(Error::Manifest(format!(
                "artifact {name:?} ({}) no longer exists",
                path.display()
            )));
        }
        let digest = sha256_file(&path)?;
        if digest != a.file.sha256 {
            return Err(Error::Manifest(format!(
                "artifact {name:?} ({}) was modified after it was recorded",
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn has(&self, name: &str) -> bool {
        self.artifacts.contains_key(name)
    }

    pub fn record(&mut self, run_dir: &Path, stage: Stage, name: &str, file: &str) -> Result<()> {
        let sha256 = sha256_file(&run_dir.join(file))?;
        self.artifacts.insert(
            name.to_string(),
            Artifact {
                stage: stage.name().to_string(),
                file: FileDigest {
                    path: file.to_string(),
                    sha256,
                },
            },
        );
        Ok(())
    }

    /// Forgets everything `stage` and its downstream stages produced.
    pub fn reset_from(&mut self, stage: Stage) {
        let mut gone: Vec<Stage> = stage.downstream().to_vec();
        gone.push(stage);
        let names: Vec<&str> = gone.iter().map(|s| s.name()).collect();
        self.artifacts.retain(|_, a| !names.contains(&a.stage.as_str()));
        self.config
            .retain(|k, _| owner(k).is_none_or(|s| !gone.contains(&s)));
        self.seeds
            .retain(|k, _| owner(k).is_none_or(|s| !gone.contains(&s)));
        if stage == Stage::Prepare {
            self.inputs.clear();
        }
    }

    /// Records the settings a stage ran with.
    pub fn record_config(&mut self, values: BTreeMap<String, String>) -> Result<()> {
        for (k, v) in values {
            if k.ends_with("seed") {
                let seed = v
                    .parse()
                    .map_err(|_| Error::invalid(format!("seed {k} must be an unsigned integer, got {v:?}")))?;
                self.seeds.insert(k.clone(), seed);
            }
            self.config.insert(k, v);
        }
        Ok(())
    }
}
