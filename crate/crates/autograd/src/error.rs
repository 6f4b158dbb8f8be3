use thiserror::Error;

/// Errors raised by tensor construction, graph ops and the backward pass.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: usize,
        found: usize,
    },

    #[error("{op}: expected rank {expected}, found shape {found:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },

    #[error("{op}: incompatible shapes {left:?} and {right:?} (only scalar broadcasting is supported)")]
    Incompatible {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor data has {found} values but shape {shape:?} needs {expected}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("{op}: produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("backward requires a scalar loss, found shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph node {node} references input {input} that is not older than itself")]
    CycleDetected { node: usize, input: usize },

    #[error("variable {0} does not belong to this graph")]
    UnknownVar(usize),
}

pub type Result<T> = std::result::Result<T, TensorError>;
