use thiserror::Error;

/// Errors raised across the simulation, learning and explanation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid action: {0} PRBs is not in the action space")]
    InvalidAction(u32),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("numerical failure: {message} (elbo trace: {trace:?})")]
    NumericalFailure { message: String, trace: Vec<f64> },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
