use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    /// An iterate became non-finite. `last` holds the last finite state.
    #[error("iteration diverged after {iterations} steps")]
    Divergence { iterations: usize, last: Vec<f64> },

    /// An objective returned NaN or an infinity.
    #[error("objective is not finite at {at:?}")]
    Evaluation { at: Vec<f64> },

    /// Invalid experiment configuration. `path` is the offending key.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<S: Into<String>>(msg: S) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn numeric<S: Into<String>>(msg: S) -> Error {
    Error::Numeric(msg.into())
}
