//! Error type shared across the library.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, AgcmError>;

#[derive(Debug)]
pub enum AgcmError {
    /// A vector with (near-)zero Euclidean norm reached an operation that
    /// must normalize it.
    DegenerateNorm { row: Option<usize> },
    /// A constant vector reached a correlation computation.
    DegenerateVariance { row: Option<usize> },
    DimensionMismatch { expected: usize, got: usize },
    /// Parameter/gradient shapes disagree.
    ShapeMismatch { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    NonFinite { what: String },
    EmptyBatch,
    EmptyDataset,
    /// Fewer than two non-empty classes where cluster statistics need them.
    EmptyClass,
    EmptyMatrix,
    InvalidLabel { label: usize, n_classes: usize },
    InvalidConfig(String),
    /// A class does not hold exactly the expected number of shots.
    ShotCountMismatch { class: String, expected: usize, got: usize },
    /// Rejection sampling could not place all class means at the requested
    /// angular separation.
    InfeasibleSeparation { placed: usize, attempts: usize },
    Io { path: PathBuf, source: std::io::Error },
    Parse { path: PathBuf, line: usize, msg: String },
}

impl AgcmError {
    /// Attach a row index to a degenerate-input error, for messages that
    /// point at the offending batch row.
    pub fn with_row(self, index: usize) -> Self {
        match self {
            AgcmError::DegenerateNorm { .. } => AgcmError::DegenerateNorm { row: Some(index) },
            AgcmError::DegenerateVariance { .. } => {
                AgcmError::DegenerateVariance { row: Some(index) }
            }
            other => other,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AgcmError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        AgcmError::Parse { path: path.into(), line, msg: msg.into() }
    }
}

impl fmt::Display for AgcmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgcmError::DegenerateNorm { row: Some(i) } => {
                write!(f, "vector at row {i} has (near-)zero norm")
            }
            AgcmError::DegenerateNorm { row: None } => write!(f, "vector has (near-)zero norm"),
            AgcmError::DegenerateVariance { row: Some(i) } => {
                write!(f, "vector at row {i} is constant; correlation undefined")
            }
            AgcmError::DegenerateVariance { row: None } => {
                write!(f, "vector is constant; correlation undefined")
            }
            AgcmError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            AgcmError::ShapeMismatch { what, expected, got } => {
                write!(f, "{what}: shape mismatch, expected {expected:?}, got {got:?}")
            }
            AgcmError::NonFinite { what } => write!(f, "non-finite value in {what}"),
            AgcmError::EmptyBatch => write!(f, "batch holds no rows"),
            AgcmError::EmptyDataset => write!(f, "dataset holds no samples"),
            AgcmError::EmptyClass => {
                write!(f, "need at least two non-empty classes")
            }
            AgcmError::EmptyMatrix => write!(f, "confusion matrix holds no counts"),
            AgcmError::InvalidLabel { label, n_classes } => {
                write!(f, "label {label} outside class range 0..{n_classes}")
            }
            AgcmError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            AgcmError::ShotCountMismatch { class, expected, got } => {
                write!(f, "class {class}: expected exactly {expected} samples, found {got}")
            }
            AgcmError::InfeasibleSeparation { placed, attempts } => write!(
                f,
                "could not place class mean {placed} after {attempts} rejection attempts"
            ),
            AgcmError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            AgcmError::Parse { path, line, msg } => {
                write!(f, "{}:{line}: {msg}", path.display())
            }
        }
    }
}

impl std::error::Error for AgcmError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            AgcmError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
