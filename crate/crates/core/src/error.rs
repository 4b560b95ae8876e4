use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("step too large at t = {t}: energy jump {jump:.3e} exceeds {limit:.3e}")]
    StepTooLarge { t: f64, jump: f64, limit: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("isotropic oscillator: {0}")]
    Isotropic(String),

    #[error("precision exhausted: {0}")]
    Precision(String),

    #[error("not enough convergents: {0}")]
    NotEnoughConvergents(String),

    #[error("truncation too small: {0}")]
    Truncation(String),

    #[error("quadrature not resolved: entry changed by {change:.3e} under node doubling")]
    QuadratureResolution { change: f64 },

    #[error("value outside validated range: {0}")]
    Range(String),

    #[error("radial condition fails: {0}")]
    NonCollinearGradient(String),

    #[error("optimizer failure: {0}")]
    Optimizer(String),
}

impl Error {
    /// True for errors caused by the caller's parameters rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Dimension { .. }
                | Error::Domain(_)
                | Error::Unsupported(_)
                | Error::Isotropic(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
