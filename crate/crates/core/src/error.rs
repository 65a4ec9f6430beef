use std::path::PathBuf;

/// Errors produced anywhere in the unlearning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "optimizer did not converge after {iterations} iterations (gradient norm {residual:.3e})"
    )]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("deletion budget exhausted: {remaining} points would remain after round {round}")]
    BudgetExhausted { round: usize, remaining: i64 },

    #[error("hessian is ill-conditioned (minimum eigenvalue below {floor:.3e})")]
    IllConditionedHessian { floor: f64 },

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
