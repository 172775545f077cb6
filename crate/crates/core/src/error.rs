use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on a dimension.
    DimensionMismatch {
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    NotSquare { rows: usize, cols: usize },
    /// Backing buffer length does not equal `rows * cols`.
    BadLength { rows: usize, cols: usize, len: usize },
    NonFinite { row: usize, col: usize },
    InvalidParameter { name: &'static str, reason: String },
    /// A covariance was finalized before any calibration row was seen.
    EmptyCalibration,
    /// SNR requested against a reference with zero energy.
    UndefinedSnr,
    /// A smoothing scale that is zero, negative or not finite.
    InvalidScale { index: usize, value: f64 },
    NoConvergence { routine: &'static str },
}

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                context,
                left,
                right,
            } => write!(
                f,
                "dimension mismatch in {context}: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::NotSquare { rows, cols } => {
                write!(f, "expected a square matrix, got {rows}x{cols}")
            }
            Error::BadLength { rows, cols, len } => write!(
                f,
                "buffer of length {len} cannot hold a {rows}x{cols} matrix"
            ),
            Error::NonFinite { row, col } => {
                write!(f, "non-finite entry at ({row}, {col})")
            }
            Error::InvalidParameter { name, reason } => {
                write!(f, "invalid parameter `{name}`: {reason}")
            }
            Error::EmptyCalibration => f.write_str("no calibration rows were accumulated"),
            Error::UndefinedSnr => f.write_str("SNR is undefined for a zero-energy reference"),
            Error::InvalidScale { index, value } => {
                write!(f, "smoothing scale {index} must be positive and finite, got {value}")
            }
            Error::NoConvergence { routine } => write!(f, "{routine} did not converge"),
        }
    }
}

impl core::error::Error for Error {}
