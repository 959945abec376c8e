use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (dimensions, sizes, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value while evaluating {what} at coordinate {coordinate}")]
    Evaluation { what: String, coordinate: usize },

    #[error("evaluation failed at observation {index}: {source}")]
    AtObservation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("singular matrix (condition estimate {condition:.3e})")]
    SingularMatrix { condition: f64 },

    #[error("singular moment Jacobian (condition estimate {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("Newton solver did not converge after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence {
        theta: Vec<f64>,
        residual: f64,
        iterations: usize,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures of the estimator itself (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::SingularJacobian { .. } | Error::NoConvergence { .. } => true,
            Error::AtObservation { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
