use std::path::PathBuf;

use thiserror::Error;

use crate::backbone::ModelError;
use crate::data::DataError;
use crate::eval::EvalError;
use crate::scorer::ScorerError;
use crate::synth::SynthError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for pipelines that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for invalid input or configuration, 3 for a
    /// remote endpoint failure, 2 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Data(_) => 1,
            Error::Eval(EvalError::MissingRatings | EvalError::NoPlantedFlags) => 1,
            Error::Synth(SynthError::Infeasible(_) | SynthError::Format { .. } | SynthError::Data(_)) => 1,
            Error::Scorer(e) if e.is_remote() => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
