use thiserror::Error;

/// Problems with a configuration document or with profile values.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field}: unknown placement mode `{token}` (expected one of R, S, S*, M, O)")]
    UnknownMode { field: String, token: String },
    #[error("strategy: unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("{0}: missing required field")]
    MissingField(String),
    #[error("{field}: must be positive, got {value}")]
    NonPositiveSize { field: String, value: String },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("exactly one of `placement`, `strategy` or `composition` is required, found {0}")]
    SpecSelector(String),
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn non_positive(field: impl Into<String>, value: impl ToString) -> Self {
        ConfigError::NonPositiveSize {
            field: field.into(),
            value: value.to_string(),
        }
    }
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Failures of the in-process collectives.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CollectiveError {
    #[error("expected one buffer per group member ({expected}), got {got}")]
    MemberCount { expected: usize, got: usize },
    #[error("buffer lengths differ across members: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("element sizes differ across members: {0:?}")]
    ElementSizeMismatch(Vec<u64>),
    #[error("shard lengths {got:?} do not follow the contiguous shard rule {expected:?}")]
    ShardShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("device group members must be distinct and non-empty: {0:?}")]
    InvalidGroup(Vec<usize>),
}

/// Failures of the training simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("analytical-only mode: {0}")]
    SpecUnsupported(String),
    #[error("global batch {batch} is not divisible by {parts} data-parallel replicas")]
    BatchNotDivisible { batch: usize, parts: usize },
    #[error("dimension {dim} of layer {layer} is not divisible by tensor-parallel degree {degree}")]
    DimNotDivisible {
        layer: usize,
        dim: usize,
        degree: usize,
    },
    #[error("{layers} layers cannot be split into {parts} equal parts")]
    LayersNotDivisible { layers: usize, parts: usize },
    #[error("device count {devices} does not match {detail}")]
    DeviceMismatch { devices: usize, detail: String },
    #[error("invalid simulation setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Collective(#[from] CollectiveError),
}

/// Failures while building a device grid.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompositionError {
    #[error("factor degrees multiply to {product}, but the cluster has {devices} devices")]
    DegreeMismatch { product: u64, devices: u64 },
    #[error("unsupported composition: {0}")]
    Unsupported(String),
}
