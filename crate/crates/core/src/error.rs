use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Input errors describe data or configuration that can never produce a
/// valid fit; numerical errors describe a computation that broke down on
/// otherwise valid input (a Cholesky factorization that would not
/// succeed even after jitter, a slice sampler that could not shrink).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True when the error stems from invalid input rather than a
    /// numerical breakdown.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::Input(_) | Error::Csv { .. } | Error::Json { .. } | Error::Io { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
