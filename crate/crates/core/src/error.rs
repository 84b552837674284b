use thiserror::Error;

/// Errors produced by the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("time {t} outside the window [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("no sign change of aggregate wealth minus capital on [{lo}, {hi}] after widening; expected wealth only spans (-inf, 0] to +inf asymptotically in the rate")]
    NoBracket { lo: f64, hi: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
