//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
///
/// `Config` and `Parameter` indicate bad user input (the CLI maps them to
/// exit code 2); everything else — including malformed result files — is a
/// runtime failure (exit code 1).
#[derive(Debug, Error)]
pub enum Error {
    /// Two buffers that must agree in length do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A scalar or structural argument is outside its legal range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A serialized artifact (optimizer state, snapshot, CSV) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// An experiment configuration is invalid or unreadable.
    #[error("config error: {0}")]
    Config(String),

    /// Controller initialization failed (e.g. non-finite initial probe loss).
    #[error("init error: {0}")]
    Init(String),

    /// A run aborted; the seed index identifies which one.
    #[error("run for seed {seed} failed: {source}")]
    Run {
        seed: u32,
        #[source]
        source: Box<Error>,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the seed index of the run that produced it.
    pub fn for_seed(seed: u32, source: Error) -> Self {
        Error::Run {
            seed,
            source: Box::new(source),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parameter(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
