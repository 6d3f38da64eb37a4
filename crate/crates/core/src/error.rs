use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SaeError>;

/// Errors raised across ingestion, fitting and prediction.
#[derive(Debug, Error)]
pub enum SaeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("arity mismatch: {what} expected {expected}, found {found}")]
    Arity {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("threshold mismatch: model has {model:?}, data uses {data:?}")]
    ThresholdMismatch { model: Vec<f64>, data: Vec<f64> },

    #[error("unsupported model schema version {found} (expected {expected})")]
    Schema { expected: u32, found: u32 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("value {value} outside the Box-Cox range for kappa={kappa}")]
    OutOfRange { value: f64, kappa: f64 },

    #[error("all importance weights vanished for area {area}")]
    WeightCollapse { area: String },

    #[error("truncated normal failure for area {area} on [{lower}, {upper}) with mean {mean} and sd {sd}")]
    TruncatedNormal {
        area: String,
        lower: f64,
        upper: f64,
        mean: f64,
        sd: f64,
    },

    #[error("non-finite objective at the starting point of the {0} maximization")]
    NonFiniteObjective(String),

    #[error("unknown {kind} '{name}'")]
    UnknownStrategy { kind: &'static str, name: String },
}

impl SaeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SaeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            SaeError::Io { .. } => "io",
            SaeError::Csv(_) => "csv",
            SaeError::Json(_) => "json",
            SaeError::Malformed(_) => "malformed",
            SaeError::Arity { .. } => "arity",
            SaeError::Invalid(_) => "invalid",
            SaeError::ThresholdMismatch { .. } => "threshold_mismatch",
            SaeError::Schema { .. } => "schema",
            SaeError::Singular(_) => "singular",
            SaeError::OutOfRange { .. } => "out_of_range",
            SaeError::WeightCollapse { .. } => "weight_collapse",
            SaeError::TruncatedNormal { .. } => "truncated_normal",
            SaeError::NonFiniteObjective(_) => "non_finite_objective",
            SaeError::UnknownStrategy { .. } => "unknown_strategy",
        }
    }
}
