use thiserror::Error;

/// Errors raised by the simulation, model and optimization layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite activation in layer `{layer}`")]
    NonFinite { layer: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        /// Parameters before the offending update.
        last_good: Box<crate::blackbox::ModelParameters>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
