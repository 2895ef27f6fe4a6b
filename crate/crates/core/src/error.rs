use std::path::PathBuf;

use thiserror::Error;

use crate::eval::EvalError;
use crate::fitness::FitnessError;
use crate::imc::MappingError;
use crate::space::{DecodeError, Invalid};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error("invalid genome: {0}")]
    InvalidGenome(#[from] Invalid),

    #[error(transparent)]
    Mapping(#[from] MappingError),

    #[error(transparent)]
    Fitness(#[from] FitnessError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("no valid genome found after {attempts} attempts")]
    NoValidGenome { attempts: usize },

    #[error("trial log {path}: {reason}")]
    Log { path: PathBuf, reason: String },

    #[error("report requested on a log with no successful trials")]
    EmptyReport,

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
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
