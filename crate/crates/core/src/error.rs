use thiserror::Error;

/// Errors raised by the simulation and verification engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid volatility band [{lo}, {hi}]: need 0 <= lo <= hi and hi > 0")]
    InvalidBand { lo: f64, hi: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("control `{control}` emitted sigma = {sigma} at t = {t}, outside band [{lo}, {hi}]")]
    BandViolation {
        control: String,
        t: f64,
        sigma: f64,
        lo: f64,
        hi: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("breakpoint t = {t} is not a point of the simulation grid")]
    Alignment { t: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value at grid index {index}: {what}")]
    NonFinite { index: usize, what: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
