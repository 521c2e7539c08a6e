use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("insufficient responses: need at least 2 per prompt, universe has {0}")]
    InsufficientResponses(usize),

    #[error("index out of range: {what} {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("degenerate reward scale for value {0}")]
    DegenerateScale(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid simplex weights: {0}")]
    InvalidWeights(String),

    #[error("cannot train on empty filtered subset")]
    EmptyTrainingSubset,

    #[error("training loss increased from {initial} to {last}")]
    LossIncreased { initial: f64, last: f64 },

    #[error("disjoint prompt supports")]
    DisjointSupports,

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("pair {index}: {source}")]
    AtPair {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{message} at line {line}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_pair(self, index: usize) -> Self {
        Error::AtPair {
            index,
            source: Box::new(self),
        }
    }
}
