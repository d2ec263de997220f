use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: su(n) needs n >= 2")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Transversality is undefined where the translated gradient vanishes.
    #[error("translated gradient is zero (kinematic critical point)")]
    KinematicCritical,

    #[error("singular-control denominator vanished at t = {t}")]
    DegenerateDenominator { t: f64 },

    #[error("every restart was rejected by the magnitude bound")]
    AllRejected,

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn mismatch(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
