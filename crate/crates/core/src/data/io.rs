use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{Dataset, HashTokenizer, PreferencePair};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct TextRecord {
    chosen: String,
    rejected: String,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(format!("cannot open {}", path.display()), e))
}

/// Reads `{"chosen": ..., "rejected": ...}` text records and tokenizes them.
///
/// Ids follow file order starting at 0; blank lines are skipped.
pub fn load(path: &Path, tokenizer: &HashTokenizer) -> Result<Dataset> {
    let reader = open(path)?;
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let chosen = tokenizer.tokenize(&rec.chosen);
        let rejected = tokenizer.tokenize(&rec.rejected);
        if chosen.is_empty() || rejected.is_empty() {
            return Err(parse_err(path, lineno, "empty chosen or rejected text"));
        }
        pairs.push(PreferencePair::new(pairs.len() as u64, chosen, rejected));
    }
    if pairs.is_empty() {
        return Err(Error::invalid(format!("{} contains no records", path.display())));
    }
    Dataset::new(pairs)
}

/// Reads a prepared (token-id) dataset.
pub fn read_jsonl(path: &Path) -> Result<Dataset> {
    let reader = open(path)?;
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        pairs.push(pair);
    }
    Dataset::new(pairs)
}

pub fn write_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::io(format!("cannot create {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    for p in dataset {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
