use thiserror::Error;

pub type Result<T> = std::result::Result<T, VoxError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoxError {
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: usize,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected rank {expected}, found shape {found:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("{op}: invalid configuration: {reason}")]
    Config { op: &'static str, reason: String },
    #[error("{op}: degenerate input: {reason}")]
    Degenerate { op: &'static str, reason: String },
    #[error("backward root must be a scalar, found shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("shape {shape:?} holds {expected} elements but {found} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
}

impl VoxError {
    pub(crate) fn config(op: &'static str, reason: impl Into<String>) -> Self {
        VoxError::Config {
            op,
            reason: reason.into(),
        }
    }
}
