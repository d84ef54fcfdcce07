use std::path::PathBuf;

use num_complex::Complex64;

/// Errors produced anywhere in the OTSM toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A message-passing detector produced a non-finite state.
    #[error("detector diverged after {iterations} iteration(s)")]
    Divergence {
        iterations: usize,
        /// Hard decisions (constellation indices) from the last finite iterate.
        last_hard: Vec<usize>,
        /// Last finite posterior means.
        last_mean: Vec<Complex64>,
    },

    #[error("search space of {required} candidates exceeds the cap of {cap}")]
    SearchSpaceTooLarge { required: f64, cap: f64 },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn invalid_cfg(msg: impl Into<String>) -> Error {
    Error::InvalidConfiguration(msg.into())
}
