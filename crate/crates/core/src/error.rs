use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: record {record}, field {field:?}: {message}", file.display())]
    Parse {
        file: PathBuf,
        record: usize,
        field: String,
        message: String,
    },

    #[error("{}: schema mismatch: {message}", file.display())]
    SchemaMismatch { file: PathBuf, message: String },

    #[error("{}: record {record}, field {field:?}: value {value} outside [{min}, {max}]", file.display())]
    ValueOutOfRange {
        file: PathBuf,
        record: usize,
        field: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("unsupported schema version {found:?} (supported: {supported})")]
    VersionUnsupported { found: String, supported: &'static str },

    #[error("dataset violates {} invariant(s); first: {}", .0.len(), .0[0])]
    InvalidDataset(Vec<Violation>),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("feature-level attention requested but the tensor only has event-level weights")]
    FeatureAttentionMissing,

    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("no items to cluster")]
    EmptyInput,

    #[error("stop_at {stop_at} outside 1..={n}")]
    StopOutOfRange { stop_at: usize, n: usize },

    #[error("k = {k} outside {min}..={max}")]
    KOutOfRange { k: usize, min: usize, max: usize },

    #[error("distance curve needs at least 3 merges, got {0}")]
    TooFewMerges(usize),

    #[error("noise reduction needs at least 3 instances, got {0}")]
    TooFewInstances(usize),

    #[error("no residual instances to draw references from")]
    EmptyResidual,

    #[error("summaries disagree on feature: {0} vs {1}")]
    FeatureMismatch(usize, usize),

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("unknown job {0}")]
    UnknownJob(u64),

    #[error("unknown feature {0}")]
    UnknownFeature(usize),

    #[error("pipeline not ready (stage: {0})")]
    NotReady(String),

    #[error("job cancelled")]
    Cancelled,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
