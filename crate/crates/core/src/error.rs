use std::path::PathBuf;

use thiserror::Error;

use crate::model::ParamGroup;

pub type Result<T> = std::result::Result<T, VcmError>;

#[derive(Debug, Error)]
pub enum VcmError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("softmax of an empty vector")]
    EmptySoftmax,

    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidDropoutRate(f64),

    #[error("posterior scale must be strictly positive and finite (index {index}, value {value})")]
    NonPositiveScale { index: usize, value: f64 },

    #[error("non-finite gradient in parameter group {0}")]
    NonFiniteGradient(ParamGroup),

    #[error("non-finite objective at epoch {epoch}, iteration {iteration}")]
    NonFiniteObjective { epoch: usize, iteration: u64 },

    #[error("beta {value} outside [0, {cap}]")]
    BetaOutOfRange { value: f64, cap: f64 },

    #[error("empty corpus: no tokens survived stop-word removal")]
    EmptyCorpus,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),

    #[error("unknown training variant `{0}` (expected one of: vcm, vcm-se, vcm-od, vcm-nv)")]
    UnknownVariant(String),

    #[error("malformed {what} in {path}: {detail}")]
    Malformed {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VcmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VcmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        VcmError::ShapeMismatch {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}
