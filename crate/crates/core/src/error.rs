use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    InvalidInput,
    MissingResource,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("unknown query {0:?}")]
    UnknownQuery(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("relevance judgments are empty")]
    EmptyJudgments,
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("empty subset")]
    EmptySubset,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite training input")]
    NonFiniteInput,
    #[error("infeasible dual point: {0}")]
    InfeasiblePoint(String),
    #[error("unsupported model version {found} (this build reads {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("unknown {family} {name:?} (available: {available})")]
    UnknownStrategy {
        family: &'static str,
        name: String,
        available: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorClass::MissingResource
            }
            Error::Io { .. } => ErrorClass::Internal,
            _ => ErrorClass::InvalidInput,
        }
    }
}
