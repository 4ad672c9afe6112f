use std::path::PathBuf;

/// Errors returned by the estimators, signal synthesis and experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A least-squares system does not have full column rank, either because
    /// there are fewer equations than unknowns or because the design is
    /// numerically singular.
    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("ill-conditioned system: condition estimate {estimate:.3e} exceeds {limit:.3e}")]
    IllConditioned { estimate: f64, limit: f64 },

    /// The observations carry no energy, so no angle can be extracted.
    #[error("no signal: {0}")]
    NoSignal(&'static str),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that mean "this estimator cannot run with this many
    /// pilots", as opposed to bad input.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_) | Error::IllConditioned { .. } | Error::Infeasible(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
