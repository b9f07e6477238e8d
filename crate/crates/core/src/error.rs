use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the forward models, estimators and file readers.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the domain of a formula (e.g. body breaching the surface).
    #[error("domain error: {0}")]
    Domain(String),

    /// The geometry collapsed numerically (e.g. the confocal parameter underflowed).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// A structural invariant of an input value does not hold.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// No probe pair survived selection or the depth formula.
    #[error("no admissible probe for body {body}: {reason}")]
    NoProbe { body: usize, reason: String },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Degenerate(_) | Error::NoProbe { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
