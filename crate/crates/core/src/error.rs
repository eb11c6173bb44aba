use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("covariance not positive semidefinite: min eigenvalue {min} vs max {max}")]
    NotPositiveSemidefinite { min: f64, max: f64 },

    #[error("sampling rate {sample_rate:.4e} Hz too low for occupied band ±{band_edge:.4e} Hz")]
    Aliasing { sample_rate: f64, band_edge: f64 },

    #[error("incompatible configuration: {0}")]
    Incompatible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

impl Error {
    /// Whether the error stems from the user's configuration rather than
    /// from a failure while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Config(_) | Error::Incompatible(_) | Error::Aliasing { .. }
        )
    }
}
