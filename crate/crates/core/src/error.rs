use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no donors available for stratum {stratum:?}")]
    NoDonors { stratum: Vec<u8> },

    #[error("kernel weights are all zero or negative at the target point")]
    DegenerateWeights,

    #[error("parameter outside the domain of '{function}': {message}")]
    Domain { function: String, message: String },

    #[error("non-finite estimating function value at row {row}")]
    Evaluation { row: usize },

    #[error("zero is not inside the convex hull of the estimating function values")]
    Infeasible,

    #[error("optimizer did not converge from any start (best |Q_n2| = {best_gradient:e}, best objective = {best_value})")]
    NonConvergence {
        best_gradient: f64,
        best_value: f64,
        best_theta: Vec<f64>,
    },

    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    #[error("study aborted: {failed} of {total} replications failed (cap {cap})")]
    StudyAborted {
        failed: usize,
        total: usize,
        cap: usize,
    },
}

impl Error {
    /// Process exit code: 2 for input and validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::Validation(_)
            | Error::Config(_)
            | Error::InsufficientData(_)
            | Error::Domain { .. } => 2,
            Error::NoDonors { .. }
            | Error::DegenerateWeights
            | Error::Evaluation { .. }
            | Error::Infeasible
            | Error::NonConvergence { .. }
            | Error::Conditioning(_)
            | Error::StudyAborted { .. } => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
