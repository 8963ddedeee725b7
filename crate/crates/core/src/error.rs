use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("invalid ingestion config: {0}")]
    InvalidSchema(String),

    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),

    #[error("item `{0}` has no features")]
    EmptyItem(String),

    #[error("item `{item}` has non-positive value {value} for attribute `{attribute}`")]
    NonPositiveValue {
        item: String,
        attribute: String,
        value: f64,
    },

    #[error("feature universe mismatch: expected dimension {expected}, got {actual}")]
    UniverseMismatch { expected: usize, actual: usize },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("invalid cluster count k={k} for {n} items")]
    InvalidClusterCount { k: usize, n: usize },

    #[error("sample size {m} exceeds available items {n}")]
    SampleTooLarge { m: usize, n: usize },

    #[error("no labeled items to propagate from")]
    NoLabels,

    #[error("training data contains a single class")]
    DegenerateLabels,

    #[error("training data is empty")]
    EmptyTrainingSet,

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("empty candidate pool")]
    EmptyPool,

    #[error("feedback for `{item}` is missing features {missing:?}")]
    IncompleteFeedback { item: String, missing: Vec<String> },

    #[error("feedback for `{item}` names features not in the item: {extra:?}")]
    ForeignFeedback { item: String, extra: Vec<String> },

    #[error("explanations cover different feature sets")]
    FeatureSetMismatch,

    #[error("missing labels for items {0:?}")]
    MissingLabels(Vec<String>),

    #[error("item `{0}` is not in the pending batch")]
    NotPending(String),

    #[error("session protocol violation: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("template `{template}` references unknown group `{group}`")]
    UnknownGroup { template: String, group: String },

    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("empty input")]
    EmptyInput,

    #[error("event log replay diverged at event {index}: {message}")]
    ReplayDivergence { index: usize, message: String },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
