use thiserror::Error;

use crate::ClassId;

/// Errors raised by the numeric kernel, the model and the training loop.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("cannot draw {requested} items from a population of {available}")]
    Size { requested: usize, available: usize },

    #[error("no proxy for class {0}")]
    MissingProxy(ClassId),

    #[error("label {0} is not in the class set")]
    LabelOutOfScope(ClassId),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("memory buffer is empty")]
    EmptyBuffer,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("metric is undefined: {0}")]
    UndefinedMetric(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabError {
    fn from(err: std::io::Error) -> Self {
        LabError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
