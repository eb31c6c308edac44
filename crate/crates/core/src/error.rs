use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("randomness exhausted: needed {needed} more bits")]
    RandomnessExhausted { needed: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    /// A calibration step recorded zero photons on both detectors.
    #[error("insufficient counts at phase step {step}")]
    InsufficientCounts { step: usize },

    #[error("config error: {0}")]
    Config(String),

    /// Parameters admit no secure key (or violate a security-analysis bound).
    #[error("infeasible security parameters: {0}")]
    Infeasible(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
