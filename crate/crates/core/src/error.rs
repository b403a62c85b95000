use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),

    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated tensor payload: expected {expected} values, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("k = {k} exceeds the {available} available reference points")]
    KTooLarge { k: usize, available: usize },

    #[error("LID estimation needs k >= 2, got k = {0}")]
    KTooSmall(usize),

    #[error("zero neighbor distance at rank {rank} (duplicate point); deduplicate or jitter the inputs")]
    ZeroDistance { rank: usize },

    #[error("degenerate neighborhood: all {k} neighbor distances are equal")]
    DegenerateNeighborhood { k: usize },

    #[error("non-differentiable point: distances at ranks {rank} and {} tie within {tolerance:e}", rank + 1)]
    NonDifferentiable { rank: usize, tolerance: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("region too small: {0}")]
    RegionTooSmall(String),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("non-finite loss component `{0}`")]
    NonFiniteLoss(&'static str),

    #[error("graph node {node} ({op}): {message}")]
    Graph {
        node: usize,
        op: &'static str,
        message: String,
    },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("unbound input `{0}`")]
    UnboundInput(String),

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("unknown transform: {0}")]
    UnknownTransform(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("experiment check failed: {0}")]
    Check(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
