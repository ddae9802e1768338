use alloc::string::String;
use core::fmt;

/// Library-wide error type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Invalid argument or configuration value.
    Parameter(String),
    /// A numerical procedure failed (singular system, divergent sum, ...).
    Numerical(String),
    /// The requested analytic prediction is not available for this
    /// (matrix family, dynamics variant, readout method) combination.
    Capability(String),
    /// Not enough samples to estimate the requested statistics.
    InsufficientData(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parameter(m) => write!(f, "parameter error: {m}"),
            Error::Numerical(m) => write!(f, "numerical error: {m}"),
            Error::Capability(m) => write!(f, "capability error: {m}"),
            Error::InsufficientData(m) => write!(f, "insufficient data: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
