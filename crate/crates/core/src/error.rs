//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("softmax over a fully masked set (the query position is never masked)")]
    AllMasked,
    #[error("mask length {got} does not match logit length {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("backward requires a scalar loss node")]
    LossNotScalar,
    #[error("tensor is not on this tape")]
    NotOnTape,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("infeasible synthetic config: {0}")]
    InfeasibleConfig(String),
    #[error("unknown partition label {0:?}")]
    UnknownPartition(String),
    #[error("malformed corpus artifact {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad index checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("malformed run file line {line}: {message}")]
    MalformedRun { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("query has no in-vocabulary tokens")]
    EmptyQuery,
    #[error("{kind} history length {len} exceeds cap {max}")]
    HistoryTooLong {
        kind: &'static str,
        len: usize,
        max: usize,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("catalogue has {got} items; need at least k_neg + 1 = {need}")]
    CatalogueTooSmall { got: usize, need: usize },
    #[error("vocabulary of {got} words is too small for {need} negative samples")]
    VocabTooSmall { got: usize, need: usize },
    #[error("loss diverged to a non-finite value at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("paired samples have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("no paired samples to test")]
    Empty,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed qrels line {line}: {message}")]
    MalformedQrels { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("reference unit is masked or out of range")]
    BadReference,
    #[error("layer {layer} out of range; model has {layers} layers")]
    LayerOutOfRange { layer: usize, layers: usize },
}
