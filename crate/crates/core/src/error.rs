use thiserror::Error;

/// Errors raised by the numerical core.
///
/// The variants split into two families that callers map to different
/// exit codes: input problems (`Config`, `Domain`, `Resolution`, `Range`,
/// `Unsupported`) and numerical-infrastructure problems (everything else).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("field blew up: {0}")]
    BlownUp(String),
    #[error("no blow-up signature: {0}")]
    NotABlowup(String),
    #[error("fit quality: {0}")]
    FitQuality(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
}

impl Error {
    /// True for errors caused by the caller's input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Domain(_) | Error::Resolution(_) | Error::Range(_) | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(format!($($arg)*)))
    };
}
pub(crate) use bail;
