use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration is inconsistent or references unknown items.
    #[error("configuration error: {0}")]
    Config(String),

    /// A sliding estimator has not yet seen a full window.
    #[error("estimator is still warming up")]
    NotReady,

    /// Step-response identification could not produce a model.
    #[error("identification failed: {0}")]
    Identification(String),

    /// The plant state became non-finite.
    #[error("simulation diverged at t = {time} s")]
    Diverged { time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
