use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero pivot at index {pivot} during LU factorization")]
    ZeroPivot { pivot: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("implicit solve failed at node {node}: {reason}")]
    ImplicitSolve { node: usize, reason: String },

    #[error("iteration diverged on worker {worker} (residual {residual:e})")]
    Diverged { worker: usize, residual: f64 },

    #[error("not converged after {max_iter} iterations; residuals per worker: {residuals:?}")]
    NotConverged { max_iter: usize, residuals: Vec<f64> },

    #[error("deadlock detected: no progress for {waited_s:.3} s\n{dump}")]
    Deadlock { waited_s: f64, dump: String },

    #[error("channel closed ({0})")]
    ChannelClosed(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("structural trace error: {0}")]
    Structural(String),

    #[error("selected phase contains no events")]
    EmptyPhase,

    #[error("replay failed: {0}")]
    Replay(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unresolved placeholder(s): {}", .0.join(", "))]
    Substitution(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
