use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {context}")]
    Numerical { context: String },

    /// CG observed `<p, (H + λI) p> <= 0`.
    #[error("non-positive curvature {curvature:e} at CG iteration {iteration}; increase damping")]
    Curvature { iteration: usize, curvature: f64 },

    #[error("training diverged at step {step}: loss {loss}")]
    Training { step: usize, loss: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("leave-one-out oracle failed for example {id}: {message}")]
    Oracle { id: u64, message: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// Wraps an error with the validation example it came from.
    #[error("validation example {val_id}: {source}")]
    AtValidation {
        val_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("curation cell {plan}: {source}")]
    AtPlan {
        plan: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(context: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
