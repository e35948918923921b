use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("not ready: need {needed} samples, have {available}")]
    NotReady { needed: u64, available: u64 },
    #[error("window start {start} has been evicted from history (oldest retained sample {oldest})")]
    Evicted { start: u64, oldest: u64 },
    #[error("stratification failed: {0}")]
    Stratification(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
