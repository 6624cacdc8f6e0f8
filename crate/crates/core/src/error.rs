use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest error at row {row}, column `{column}`: {message}")]
    Ingest {
        /// 1-based data row (header excluded); 0 when the problem is not row-specific.
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no convergence after {iterations} iterations (loglik {loglik}, gradient max-norm {grad_norm:e})")]
    Convergence {
        iterations: usize,
        loglik: f64,
        grad_norm: f64,
    },

    #[error("oracle fit supports at most 4 free parameters, got {0}")]
    Dimension(usize),

    #[error("no admissible candidate splits")]
    NoCandidates,

    #[error("invalid formula `{formula}`: {message}")]
    Formula { formula: String, message: String },

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn ingest(row: usize, column: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Ingest {
            row,
            column: column.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line interface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::Convergence { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
