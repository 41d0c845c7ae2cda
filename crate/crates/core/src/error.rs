use std::io;

use thiserror::Error;

/// Errors produced anywhere in the restoration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("training set contains no events")]
    EmptyTrainingSet,

    #[error("index {index} out of range for vocabulary of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("timestamp on line {line} is smaller than its predecessor")]
    NonMonotonicTimestamp { line: usize },

    #[error("need {needed} traces but only {available} are available")]
    InsufficientTraces { needed: usize, available: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("model has not been trained")]
    UntrainedModel,

    #[error("prediction window is empty")]
    EmptyWindow,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("loss fraction {0} is outside [0, 1)")]
    InvalidFraction(f64),

    #[error("model predicts {model} events per pass but {requested} were requested")]
    HorizonMismatch { model: usize, requested: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sequence too short for alignment: need at least {needed} events, got {got}")]
    DegenerateInput { needed: usize, got: usize },

    #[error("all timestamps are equal; cannot standardize time span")]
    DegenerateTimeSpan,

    #[error("original mining report has no instances")]
    EmptyOriginal,

    #[error("event {index} has no timestamp")]
    MissingTimestamp { index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
