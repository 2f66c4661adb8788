use thiserror::Error;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or configuration.
    Config,
    /// Inputs that exist but are inconsistent or unusable.
    Data,
    /// Numerical breakdown (factorization failure, log of zero).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("the zero function is not an admissible spectral path")]
    ZeroPath,

    #[error("atom {0} has no verdict on the requested axis")]
    MissingVerdict(usize),

    #[error("field atom log overflowed ({0} atoms retained); the field cannot be split")]
    LogOverflow(usize),

    #[error("covariance matrix is not positive semidefinite (jitter up to {max_jitter:e} failed)")]
    NotPositiveSemidefinite { max_jitter: f64 },

    #[error("estimated probability is zero: {0}")]
    LogOfZero(String),

    #[error("simulation did not terminate within {0} atoms")]
    Runaway(usize),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::Unsupported(_) => ErrorClass::Config,
            Error::GridMismatch(_) | Error::ZeroPath | Error::MissingVerdict(_) | Error::LogOverflow(_) => {
                ErrorClass::Data
            }
            Error::NotPositiveSemidefinite { .. } | Error::LogOfZero(_) | Error::Runaway(_) => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
