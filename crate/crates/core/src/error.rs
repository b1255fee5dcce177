use thiserror::Error;

/// Errors raised by the recommendation engine.
///
/// Variants fall into three families that the command-line front end maps to
/// distinct exit codes: invalid input data, numerical failures, and I/O.
#[derive(Debug, Error)]
pub enum SsrError {
    #[error("interaction record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("interaction table is empty")]
    EmptyTable,

    #[error("nodes with zero degree: {0:?}")]
    IsolatedNodes(Vec<usize>),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {context} (len {len})")]
    OutOfRange {
        context: String,
        index: usize,
        len: usize,
    },

    #[error("{n} nodes exceeds the dense eigensolver limit of {limit}; use truncated mode")]
    DenseLimit { n: usize, limit: usize },

    #[error("eigensolver did not converge after {iterations} iterations; max residual {max_residual:e}")]
    NoConvergence { iterations: usize, max_residual: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed file {path}: {reason} (byte offset {offset})")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SsrError {
    pub fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        SsrError::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SsrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SsrError::NoConvergence { .. } | SsrError::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SsrError>;
