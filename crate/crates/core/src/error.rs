use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Snapshot of the optimizer state at the moment a loss went non-finite.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NonFiniteDiagnostic {
    pub epoch: usize,
    pub step: u64,
    pub supervised: f64,
    pub consistency: f64,
    pub slice_ids: Vec<String>,
    pub max_abs_param_q: f64,
    pub max_abs_param_c: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate annotation: {0}")]
    DegenerateAnnotation(String),
    #[error("annotation violates RECIST invariants: {0}")]
    InvalidAnnotation(String),
    #[error("empty input")]
    EmptyInput,
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("component too small: {boundary} boundary pixels (need at least 4)")]
    TooSmall { boundary: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("activation cache does not match: {0}")]
    CacheMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {} step {}", .0.epoch, .0.step)]
    NonFiniteLoss(Box<NonFiniteDiagnostic>),
    #[error("could not place lesion after {attempts} attempts")]
    InfeasiblePlacement { attempts: usize },
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: parse error at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}: missing required column `{column}`")]
    Schema { path: PathBuf, column: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
