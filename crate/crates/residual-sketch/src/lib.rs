//! Hierarchical heavy hitter detection over IP traffic streams.
//!
//! The centerpiece is [`ResidualSketch`]: a stack of unbiased key/value
//! blocks pinned to pivotal layers of the IP prefix hierarchy, connected so
//! that a flow crossing a level's threshold is locked in place, its
//! already-forwarded count is subtracted one level up, and it stops being
//! recorded above. Upper levels therefore hold only residual counts, which
//! keeps per-layer error from diffusing as prefixes shorten.
//!
//! Around the sketch: an exact ground-truth oracle, the standard evaluation
//! metrics (precision/recall/F1/ARE/throughput), trace generators for
//! skewed synthetic streams, and an experiment runner with a CLI
//! (`rsketch`).

pub mod block;
pub mod config;
pub mod error;
pub mod hierarchy;
pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod sketch;
pub mod trace;

pub use block::{BlockConfig, BlockKind, ResidualBlock, UpdateKind, UpdateOutcome};
pub use error::{Error, Result};
pub use hierarchy::{FlowKey, Granularity, GranularityKind};
pub use metrics::EvalResult;
pub use oracle::ExactCounts;
pub use sketch::{HHHEntry, LevelPlan, LevelSpec, ResidualSketch};
pub use trace::PacketRecord;
