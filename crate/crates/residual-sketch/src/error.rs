//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid granularity: {0}")]
    InvalidGranularity(String),
    #[error("layer {layer} out of range 0..={max}")]
    LayerOutOfRange { layer: u8, max: u8 },
    #[error("cannot specialize a key from layer {from} down to layer {to}")]
    CannotSpecialize { from: u8, to: u8 },
    #[error("key parse error: {0}")]
    KeyParse(String),
    #[error("invalid block config: {0}")]
    InvalidBlockConfig(String),
    #[error("key at layer {got} but block stores layer {expected}")]
    LayerMismatch { got: u8, expected: u8 },
    #[error("invalid level plan: {0}")]
    InvalidPlan(String),
    #[error("insert requires a fully specified key (layer 0), got layer {0}")]
    NotFullySpecified(u8),
    #[error("update value must be >= 1")]
    ZeroValue,
    #[error("theta*N must be >= 1 (theta={theta}, n={n})")]
    ThresholdTooSmall { theta: f64, n: u64 },
    #[error("empty window: no packets recorded")]
    EmptyWindow,
    #[error("oracle key cardinality cap exceeded ({cap} distinct keys)")]
    CardinalityCap { cap: usize },
    #[error("ARE query set is empty")]
    EmptyQuerySet,
    #[error("ARE query key {0} has zero true count")]
    ZeroTrueCount(String),
    #[error("trace parse error at line {line}: {msg}")]
    TraceParse { line: usize, msg: String },
    #[error("truncated binary trace at byte offset {offset}")]
    TraceTruncated { offset: u64 },
    #[error("invalid trace spec: {0}")]
    InvalidTraceSpec(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
