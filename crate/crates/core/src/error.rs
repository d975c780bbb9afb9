use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not line up.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// A hyper-parameter or argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data violates a documented precondition.
    #[error("invalid input: {0}")]
    Data(String),

    /// A binary or text artifact is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A non-finite value appeared while iterating.
    #[error("non-finite value detected at iteration {iteration}")]
    NonFinite { iteration: usize },

    /// The sparse iteration grew beyond its configured density cap.
    #[error("density cap exceeded at iteration {iteration}: nnz {nnz} > cap {cap}")]
    DensityCap {
        iteration: usize,
        nnz: usize,
        cap: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Short machine-parsable category, used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Parameter(_) => "parameter",
            Error::Data(_) => "data",
            Error::Format(_) => "format",
            Error::NonFinite { .. } => "numeric",
            Error::DensityCap { .. } => "density",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
