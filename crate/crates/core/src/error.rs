//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch between two operands; names both shapes.
    #[error("{op}: dimension mismatch between {lhs_rows}x{lhs_cols} and {rhs_rows}x{rhs_cols}")]
    Dims {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("targets must be exactly 0 or 1, found {0}")]
    NonBinaryTarget(f64),

    #[error("loss tensor is not the final node of the tape")]
    LossNotFinal,

    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("forward function is not deterministic: {first} vs {second}")]
    NonDeterministicForward { first: f64, second: f64 },

    #[error("row id {id} out of range for table with {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    /// Malformed input file; names the offending line (1-based).
    #[error("{path}:{line}: {message}")]
    DataFormat {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint hash mismatch for {what}: checkpoint has {expected}, data has {actual}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite loss at epoch {epoch}, step {step} (note {note_id})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        note_id: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn dims(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Dims {
            op,
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }

    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }
}
