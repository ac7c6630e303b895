use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Data,
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Data => 4,
            ErrorCategory::Numerical => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
            ErrorCategory::Data => "data",
            ErrorCategory::Numerical => "numerical",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("index out of bounds: {0}")]
    IndexOutOfBounds(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence too short: need at least {min} samples, got {len}")]
    SequenceTooShort { min: usize, len: usize },
    #[error("invalid resampling target {0:?}")]
    InvalidTarget([usize; 3]),
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("ROI label {0} has no voxels")]
    EmptyRoi(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("convolution produces an empty output: {0}")]
    EmptyOutput(String),
    #[error("fragment is not deterministic: {0}")]
    NonDeterministicFragment(String),
    #[error("class {label} has {count} members, fewer than k = {k}")]
    ClassTooSmall { label: u8, count: usize, k: usize },
    #[error("only one class present")]
    SingleClass,
    #[error("loss diverged at epoch {epoch}: {detail}")]
    DivergedLoss { epoch: usize, detail: String },
    #[error("test-fold data accessed during fitting (subject index {0})")]
    LeakageViolation(usize),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed input file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            InvalidConfig(_) | InvalidTarget(_) | Json(_) => ErrorCategory::Config,
            Io(_) => ErrorCategory::Io,
            Csv(e) if e.is_io_error() => ErrorCategory::Io,
            DegenerateSeries(_) | DivergedLoss { .. } | NonDeterministicFragment(_) => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Data,
        }
    }
}
