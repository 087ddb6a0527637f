//! Declarative configuration for sketches and experiments.

use serde::{Deserialize, Serialize};

use crate::block::{BlockConfig, BlockKind};
use crate::error::{Error, Result};
use crate::hierarchy::{Granularity, GranularityKind};
use crate::sketch::{LevelPlan, LevelSpec, ResidualSketch, THRESHOLD_DISABLED};
use crate::trace::{SynthSpec, TraceFormat, ZipfSpec};

/// Bytes charged per stored cell when sizing blocks from a memory budget.
/// USS entries pay extra for the summary's index structures.
pub fn bucket_bytes(kind: BlockKind) -> usize {
    match kind {
        BlockKind::Coco => crate::block::cell_bytes(),
        BlockKind::Uss => crate::block::cell_bytes() + 16,
    }
}

/// One level in a sketch configuration. `theta_abs` pins the residual
/// threshold directly; otherwise it defaults to
/// `beta * theta * expected_window`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LevelConfig {
    /// Retained prefix length in bits (e.g. 32 for full keys, 12 for the
    /// short-prefix cluster).
    pub prefix_len: u8,
    #[serde(default)]
    pub theta_abs: Option<u64>,
}

/// Everything needed to build one sketch, minus the report threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchConfig {
    pub granularity: GranularityKind,
    #[serde(default = "default_width")]
    pub width_bits: u8,
    pub memory_kb: f64,
    pub levels: Vec<LevelConfig>,
    pub kind: BlockKind,
    #[serde(default = "default_g")]
    pub g: usize,
    /// Residual threshold factor: theta_i = beta * theta * expected_window.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Expected packets per window, used only for defaulting thresholds.
    pub expected_window: u64,
    pub seed: u64,
    /// When false, levels never lock or decrement (ablation mode).
    #[serde(default = "default_true")]
    pub connection: bool,
}

fn default_width() -> u8 {
    32
}

fn default_g() -> usize {
    2
}

fn default_beta() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

impl SketchConfig {
    pub fn granularity(&self) -> Result<Granularity> {
        Granularity::new(self.granularity, self.width_bits)
    }

    /// Build the level plan for a report threshold `theta`. Memory is split
    /// equally across levels; thresholds default to
    /// `beta * theta * expected_window` unless pinned per level. A
    /// single-level plan disables the residual connection entirely (it
    /// degenerates to a bare APK sketch).
    pub fn plan(&self, theta: f64) -> Result<LevelPlan> {
        let gran = self.granularity()?;
        if self.levels.is_empty() {
            return Err(Error::Config("at least one level required".into()));
        }
        if self.memory_kb <= 0.0 {
            return Err(Error::Config("memory_kb must be positive".into()));
        }
        let level_bytes = self.memory_kb * 1024.0 / self.levels.len() as f64;
        let g = match self.kind {
            BlockKind::Uss => 1,
            BlockKind::Coco => self.g,
        };
        let cells = (level_bytes / (g as f64 * bucket_bytes(self.kind) as f64)).floor() as usize;
        let b = cells.max(1);

        let mut levels = Vec::with_capacity(self.levels.len());
        let mut specs: Vec<&LevelConfig> = self.levels.iter().collect();
        specs.sort_by_key(|level| std::cmp::Reverse(level.prefix_len));
        for (i, level) in specs.iter().enumerate() {
            let layer = gran.layer_for_prefix_len(level.prefix_len)?;
            let threshold = if specs.len() == 1 {
                THRESHOLD_DISABLED
            } else {
                level.theta_abs.unwrap_or_else(|| {
                    (self.beta * theta * self.expected_window as f64).round() as u64
                })
            };
            levels.push(LevelSpec {
                layer,
                threshold,
                block: BlockConfig {
                    kind: self.kind,
                    g,
                    b,
                    seed: self.seed.wrapping_add(0x9E37_79B9 * i as u64),
                },
            });
        }
        LevelPlan::new(gran, levels)
    }

    pub fn build(&self, theta: f64) -> Result<ResidualSketch> {
        ResidualSketch::with_connection(self.plan(theta)?, self.connection)
    }
}

/// Which algorithm a run benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Algorithm {
    /// Multi-level sketch with coco blocks.
    ResidualCoco,
    /// Multi-level sketch with USS blocks.
    ResidualUss,
    /// Single-level coco baseline (L = 1).
    Coco,
    /// Single-level USS baseline (L = 1).
    Uss,
    /// One level per layer (L = d): the per-layer HH-style stand-in.
    PerLayer,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::ResidualCoco => "residual_coco",
            Algorithm::ResidualUss => "residual_uss",
            Algorithm::Coco => "coco",
            Algorithm::Uss => "uss",
            Algorithm::PerLayer => "per_layer",
        }
    }

    pub fn block_kind(&self) -> BlockKind {
        match self {
            Algorithm::ResidualCoco | Algorithm::Coco | Algorithm::PerLayer => BlockKind::Coco,
            Algorithm::ResidualUss | Algorithm::Uss => BlockKind::Uss,
        }
    }

    pub fn is_residual(&self) -> bool {
        matches!(self, Algorithm::ResidualCoco | Algorithm::ResidualUss)
    }
}

/// Where a run's records come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    Path { path: String, format: TraceFormat },
    Zipf(ZipfSpec),
    Synth { base: ZipfSpec, synth: SynthSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[clap(rename_all = "lowercase")]
pub enum CountUnit {
    Packets,
    Bytes,
}

/// A full experiment: one algorithm over a trace, swept across thresholds
/// and seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trace: TraceSource,
    pub algorithm: Algorithm,
    pub memory_kb: f64,
    /// Level prefix lengths (must include the full width).
    pub levels: Vec<u8>,
    pub thetas: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_width")]
    pub width_bits: u8,
    #[serde(default = "default_gran_kind")]
    pub granularity: GranularityKind,
    #[serde(default = "default_g")]
    pub g: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub theta_abs: Option<u64>,
    /// Expected window size for threshold defaults; falls back to the
    /// actual trace length when absent.
    #[serde(default)]
    pub expected_window: Option<u64>,
    #[serde(default = "default_unit")]
    pub unit: CountUnit,
}

fn default_gran_kind() -> GranularityKind {
    GranularityKind::Bit
}

fn default_unit() -> CountUnit {
    CountUnit::Packets
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory_kb < 1.0 {
            return Err(Error::Config("memory_kb must be >= 1".into()));
        }
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::Config("thetas must be fractions in (0,1)".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed required".into()));
        }
        if self.algorithm.block_kind() == BlockKind::Uss && self.g > 1 {
            return Err(Error::Config("uss algorithms require g = 1".into()));
        }
        Ok(())
    }

    /// Level prefix lengths for an algorithm: residual variants use the
    /// configured list, baselines a single full-width level, per-layer one
    /// level on every layer.
    pub fn effective_prefix_lens(&self, gran: &Granularity) -> Vec<u8> {
        match self.algorithm {
            Algorithm::ResidualCoco | Algorithm::ResidualUss => {
                let mut lens = self.levels.clone();
                if !lens.contains(&gran.width_bits()) {
                    lens.push(gran.width_bits());
                }
                lens.sort_unstable_by(|a, b| b.cmp(a));
                lens
            }
            Algorithm::Coco | Algorithm::Uss => vec![gran.width_bits()],
            Algorithm::PerLayer => {
                let unit = gran.unit_bits();
                (1..=gran.depth())
                    .map(|layer| gran.width_bits() - (layer - 1) * unit)
                    .collect()
            }
        }
    }

    /// The sketch configuration for one seed.
    pub fn sketch_config(&self, seed: u64, expected_window: u64) -> Result<SketchConfig> {
        let gran = Granularity::new(self.granularity, self.width_bits)?;
        let levels = self
            .effective_prefix_lens(&gran)
            .into_iter()
            .map(|prefix_len| LevelConfig {
                prefix_len,
                theta_abs: self.theta_abs,
            })
            .collect();
        Ok(SketchConfig {
            granularity: self.granularity,
            width_bits: self.width_bits,
            memory_kb: self.memory_kb,
            levels,
            kind: self.algorithm.block_kind(),
            g: match self.algorithm.block_kind() {
                BlockKind::Uss => 1,
                BlockKind::Coco => self.g,
            },
            beta: self.beta,
            expected_window: self.expected_window.unwrap_or(expected_window),
            seed,
            connection: true,
        })
    }

    /// Stable hash of the canonical JSON encoding, for reproduction.
    pub fn config_hash(&self) -> String {
        let encoded = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for byte in encoded.bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_sketch_config() -> SketchConfig {
        SketchConfig {
            granularity: GranularityKind::Bit,
            width_bits: 32,
            memory_kb: 256.0,
            levels: vec![
                LevelConfig {
                    prefix_len: 32,
                    theta_abs: None,
                },
                LevelConfig {
                    prefix_len: 12,
                    theta_abs: None,
                },
            ],
            kind: BlockKind::Coco,
            g: 2,
            beta: 0.8,
            expected_window: 1_000_000,
            seed: 1,
            connection: true,
        }
    }

    #[test]
    fn plan_places_levels_by_prefix_len() {
        let cfg = base_sketch_config();
        let plan = cfg.plan(0.001).unwrap();
        let layers: Vec<u8> = plan.levels().iter().map(|l| l.layer).collect();
        assert_eq!(layers, vec![0, 20]);
        // beta * theta * window = 0.8 * 0.001 * 1e6 = 800.
        assert_eq!(plan.levels()[0].threshold, 800);
    }

    #[test]
    fn memory_split_equally_and_floored() {
        let cfg = base_sketch_config();
        let plan = cfg.plan(0.001).unwrap();
        let per_level = 256.0 * 1024.0 / 2.0;
        let expect_b = (per_level / (2.0 * bucket_bytes(BlockKind::Coco) as f64)).floor() as usize;
        assert_eq!(plan.levels()[0].block.b, expect_b);
        assert_eq!(plan.levels()[1].block.b, expect_b);
    }

    #[test]
    fn single_level_disables_thresholds() {
        let mut cfg = base_sketch_config();
        cfg.levels = vec![LevelConfig {
            prefix_len: 32,
            theta_abs: None,
        }];
        let plan = cfg.plan(0.001).unwrap();
        assert_eq!(plan.levels()[0].threshold, THRESHOLD_DISABLED);
    }

    #[test]
    fn theta_abs_overrides_default() {
        let mut cfg = base_sketch_config();
        cfg.levels[0].theta_abs = Some(123);
        let plan = cfg.plan(0.001).unwrap();
        assert_eq!(plan.levels()[0].threshold, 123);
        assert_eq!(plan.levels()[1].threshold, 800);
    }

    #[test]
    fn per_layer_uses_every_layer() {
        let exp = ExperimentConfig {
            trace: TraceSource::Zipf(ZipfSpec {
                skew: 1.0,
                keys: 10,
                length: 100,
                seed: 1,
            }),
            algorithm: Algorithm::PerLayer,
            memory_kb: 64.0,
            levels: vec![],
            thetas: vec![0.01],
            seeds: vec![1],
            width_bits: 8,
            granularity: GranularityKind::Bit,
            g: 2,
            beta: 0.8,
            theta_abs: None,
            expected_window: None,
            unit: CountUnit::Packets,
        };
        let gran = Granularity::bit(8).unwrap();
        let lens = exp.effective_prefix_lens(&gran);
        assert_eq!(lens, vec![8, 7, 6, 5, 4, 3, 2, 1]);
        let cfg = exp.sketch_config(1, 100).unwrap();
        let plan = cfg.plan(0.01).unwrap();
        assert_eq!(plan.level_count(), 8);
    }

    #[test]
    fn uss_with_g_gt_one_rejected() {
        let exp = ExperimentConfig {
            trace: TraceSource::Zipf(ZipfSpec {
                skew: 1.0,
                keys: 10,
                length: 100,
                seed: 1,
            }),
            algorithm: Algorithm::Uss,
            memory_kb: 64.0,
            levels: vec![32],
            thetas: vec![0.01],
            seeds: vec![1],
            width_bits: 32,
            granularity: GranularityKind::Bit,
            g: 2,
            beta: 0.8,
            theta_abs: None,
            expected_window: None,
            unit: CountUnit::Packets,
        };
        assert!(exp.validate().is_err());
    }

    #[test]
    fn config_hash_stable_and_sensitive() {
        let exp = ExperimentConfig {
            trace: TraceSource::Zipf(ZipfSpec {
                skew: 1.0,
                keys: 10,
                length: 100,
                seed: 1,
            }),
            algorithm: Algorithm::Coco,
            memory_kb: 64.0,
            levels: vec![32],
            thetas: vec![0.01],
            seeds: vec![1],
            width_bits: 32,
            granularity: GranularityKind::Bit,
            g: 2,
            beta: 0.8,
            theta_abs: None,
            expected_window: None,
            unit: CountUnit::Packets,
        };
        let h1 = exp.config_hash();
        assert_eq!(h1, exp.config_hash());
        let mut other = exp.clone();
        other.memory_kb = 65.0;
        assert_ne!(h1, other.config_hash());
    }
}
