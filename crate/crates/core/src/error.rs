use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or a precondition the caller controls.
    Usage,
    /// File access or file format problems.
    Format,
    /// A numeric contract could not be honoured.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid is empty ({width}x{height})")]
    EmptyGrid { width: usize, height: usize },

    #[error("grid {width}x{height} needs {expected} values, got {found}")]
    DimensionMismatch {
        width: usize,
        height: usize,
        expected: usize,
        found: usize,
    },

    #[error("grids disagree in shape: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("value {value} at index {index} outside {expected}")]
    OutOfRange {
        index: usize,
        value: f64,
        expected: &'static str,
    },

    #[error("malformed grid header: {0}")]
    MalformedHeader(String),

    #[error("malformed point list: {0}")]
    MalformedPoints(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid pattern spec: {0}")]
    InvalidSpec(String),

    #[error("requested {requested} points but only {available} valid pixels exist")]
    NotEnoughPoints { requested: usize, available: usize },

    #[error("regression has no support points")]
    NoSupport,

    #[error("regression weights sum to zero")]
    ZeroWeights,

    #[error("regression is degenerate (weighted variance {variance:e})")]
    DegenerateRegression { variance: f64 },

    #[error("affinity budget exceeded at pixel {pixel}: sum |w| = {sum}")]
    UnnormalizedField { pixel: usize, sum: f64 },

    #[error("predictor contract violated: {0}")]
    PredictorContract(String),

    #[error("confidence must be positive, got {value} at index {index}")]
    NonPositiveConfidence { index: usize, value: f64 },

    #[error("ground truth is zero inside the evaluation mask at index {index}")]
    ZeroGroundTruth { index: usize },

    #[error("evaluation mask selects no pixels")]
    EmptyMask,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::EmptyGrid { .. }
            | Error::DimensionMismatch { .. }
            | Error::NonFinite { .. }
            | Error::OutOfRange { .. }
            | Error::MalformedHeader(_)
            | Error::MalformedPoints(_)
            | Error::Io { .. } => ErrorClass::Format,
            Error::ShapeMismatch { .. }
            | Error::InvalidParameter(_)
            | Error::InvalidSpec(_)
            | Error::NotEnoughPoints { .. } => ErrorClass::Usage,
            Error::NoSupport
            | Error::ZeroWeights
            | Error::DegenerateRegression { .. }
            | Error::UnnormalizedField { .. }
            | Error::PredictorContract(_)
            | Error::NonPositiveConfidence { .. }
            | Error::ZeroGroundTruth { .. }
            | Error::EmptyMask => ErrorClass::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
