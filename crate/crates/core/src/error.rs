use std::io;

use thiserror::Error;

/// Failures raised by tensor operations and the autodiff engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a single-element tensor, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("{op}: index {index} out of range for extent {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward called on a tensor that does not require gradients")]
    NoGraph,
    #[error("graph already consumed by a previous backward pass (double backward is unsupported)")]
    GraphSpent,
    #[error("parameters without gradients: {}", .0.join(", "))]
    MissingGrad(Vec<String>),
}

/// Checkpoint decoding failures. Each variant maps to a distinct CLI exit path.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is incompatible with this model: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("question contains no tokens")]
    EmptyQuestion,
    #[error("every target position is padding")]
    EmptyTarget,
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    OutOfVocab { id: usize, vocab_size: usize },
    #[error("sequence length {got} does not match expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("malformed pair input: {0}")]
    MalformedPair(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("generator loss requires soft rows on every fake pair")]
    MissingSoftRows,
    #[error("non-finite {phase} loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite {
        phase: &'static str,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("adversarial training needs a pretrained generator: {0}")]
    PhaseOrder(String),
    #[error("critic parameter {name} = {value} exceeds clip bound {bound}")]
    ClipViolation { name: String, value: f64, bound: f64 },
    #[error("corpus parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
