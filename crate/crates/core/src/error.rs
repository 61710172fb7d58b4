use std::path::PathBuf;

use thiserror::Error;

use crate::records::{ParseError, Protocol, ValidationReport};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{} line(s) failed to parse; first: {}", .0.len(), .0[0])]
    Parse(Vec<ParseError>),

    #[error("validation failed with {} error(s)", .0.errors.len())]
    Validation(ValidationReport),

    #[error("key absent: {0}")]
    KeyAbsent(String),

    #[error("protocol {0} absent from slice {1}")]
    ProtocolAbsent(Protocol, String),

    #[error("empty sample set for {0}")]
    EmptySlice(String),

    #[error("sample sets differ between protocols for {0}")]
    SampleMismatch(String),

    #[error("step 0 absent for {0}")]
    MissingInitialStep(String),

    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("abscissae must be strictly increasing (index {0})")]
    NonMonotone(usize),

    #[error("step grids differ across series")]
    GridMismatch,

    #[error("length mismatch: expected {expected}, got {got} ({what})")]
    LengthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("statistic undefined on every resample")]
    UndefinedStatistic,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
