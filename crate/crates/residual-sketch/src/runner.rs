//! Experiment runner: wires traces, sketches, the oracle and metrics into
//! reproducible runs.
//!
//! Timing covers only the insert loop; records are materialized in memory
//! beforehand so Mpps figures measure processing, not parsing. Accuracy
//! columns are deterministic for a given (config, seed); only the
//! throughput column varies with the wall clock.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{CountUnit, ExperimentConfig, TraceSource};
use crate::error::{Error, Result};
use crate::hierarchy::Granularity;
use crate::metrics::{self, EvalResult};
use crate::oracle::ExactCounts;
use crate::sketch::HHHEntry;
use crate::trace::{self, PacketRecord};

/// One evaluated (algorithm, config, theta, seed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub config_hash: String,
    pub seed: u64,
    pub theta: f64,
    pub memory_kb: f64,
    pub n: u64,
    pub connection: bool,
    #[serde(flatten)]
    pub eval: EvalResult,
}

/// Materialize the records for one run seed. Generated sources derive
/// their generator seeds from the run seed so every seed gets its own
/// trace; file sources are fixed.
pub fn materialize_trace(source: &TraceSource, run_seed: u64) -> Result<Vec<PacketRecord>> {
    match source {
        TraceSource::Path { path, format } => trace::read_trace(Path::new(path), *format),
        TraceSource::Zipf(spec) => {
            let mut spec = *spec;
            spec.seed = spec.seed.wrapping_add(run_seed);
            trace::gen_zipf(&spec)
        }
        TraceSource::Synth { base, synth } => {
            let mut base = *base;
            base.seed = base.seed.wrapping_add(run_seed);
            let mut synth = *synth;
            synth.seed = synth.seed.wrapping_add(run_seed);
            trace::skew_modify(trace::gen_zipf(&base)?, &synth)
        }
    }
}

fn record_value(unit: CountUnit, rec: &PacketRecord) -> u64 {
    match unit {
        CountUnit::Packets => 1,
        CountUnit::Bytes => u64::from(rec.value),
    }
}

/// Replay one trace through one sketch; returns the report and the timed
/// insert-loop duration in seconds.
fn timed_run(
    sketch: &mut crate::sketch::ResidualSketch,
    records: &[PacketRecord],
    unit: CountUnit,
    theta: f64,
) -> Result<(Vec<HHHEntry>, f64)> {
    let start = Instant::now();
    for rec in records {
        sketch.insert_ip(rec.src_ip, record_value(unit, rec))?;
    }
    let elapsed = start.elapsed().as_secs_f64().max(1e-9);
    let reported = if records.is_empty() {
        Vec::new()
    } else {
        sketch.extract_hhh(theta)?
    };
    Ok((reported, elapsed))
}

fn oracle_for(
    gran: &Granularity,
    records: &[PacketRecord],
    unit: CountUnit,
) -> Result<ExactCounts> {
    let mut counts = ExactCounts::new(gran.clone());
    for rec in records {
        counts.observe(rec.src_ip, record_value(unit, rec))?;
    }
    Ok(counts)
}

/// Run the full sweep: every (seed, theta) pair gets one row.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    let gran = Granularity::new(cfg.granularity, cfg.width_bits)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let records = materialize_trace(&cfg.trace, seed)?;
        let counts = oracle_for(&gran, &records, cfg.unit)?;
        for &theta in &cfg.thetas {
            let sketch_cfg = cfg.sketch_config(seed, records.len() as u64)?;
            let mut sketch = sketch_cfg.build(theta)?;
            let (reported, elapsed) = timed_run(&mut sketch, &records, cfg.unit, theta)?;
            let truth = if records.is_empty() {
                Vec::new()
            } else {
                counts.exact_hhh(theta)?
            };
            let eval = metrics::evaluate(
                &reported,
                &truth,
                gran.depth(),
                records.len() as u64,
                elapsed,
            );
            rows.push(ResultRow {
                algorithm: cfg.algorithm.label().to_string(),
                config_hash: hash.clone(),
                seed,
                theta,
                memory_kb: cfg.memory_kb,
                n: records.len() as u64,
                connection: true,
                eval,
            });
        }
    }
    Ok(rows)
}

/// Paired with/without-connection measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<ResultRow>,
    pub repetitions: usize,
    pub mean_with_mpps: f64,
    pub mean_without_mpps: f64,
    /// One-sided paired t statistic of (with - without) throughput.
    pub t_statistic: f64,
    /// Mean |F1_with - F1_without| across repetitions.
    pub mean_f1_delta: f64,
    /// Total block updates issued above level 1, per variant.
    pub upper_updates_with: u64,
    pub upper_updates_without: u64,
}

/// Run the residual-connection ablation: identical traces and seeds, the
/// forwarding stop / lock / decrement machinery enabled vs disabled,
/// `repetitions` paired timed runs.
pub fn run_connection_ablation(
    cfg: &ExperimentConfig,
    repetitions: usize,
) -> Result<AblationReport> {
    cfg.validate()?;
    if !cfg.algorithm.is_residual() {
        return Err(Error::Config(
            "connection ablation requires a residual algorithm".into(),
        ));
    }
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be >= 1".into()));
    }
    let hash = cfg.config_hash();
    let gran = Granularity::new(cfg.granularity, cfg.width_bits)?;
    let theta = cfg.thetas[0];
    let seed = cfg.seeds[0];
    let records = materialize_trace(&cfg.trace, seed)?;
    let counts = oracle_for(&gran, &records, cfg.unit)?;
    let truth = if records.is_empty() {
        Vec::new()
    } else {
        counts.exact_hhh(theta)?
    };

    let mut rows = Vec::new();
    let mut diffs = Vec::with_capacity(repetitions);
    let mut f1_deltas = Vec::with_capacity(repetitions);
    let mut upper_with = 0u64;
    let mut upper_without = 0u64;
    for _ in 0..repetitions {
        let mut pair = [0.0f64; 2];
        let mut f1_pair = [0.0f64; 2];
        for (slot, connection) in [(0usize, true), (1usize, false)] {
            let mut sketch_cfg = cfg.sketch_config(seed, records.len() as u64)?;
            sketch_cfg.connection = connection;
            let mut sketch = sketch_cfg.build(theta)?;
            let (reported, elapsed) = timed_run(&mut sketch, &records, cfg.unit, theta)?;
            let upper: u64 = sketch.level_update_counts().iter().skip(1).sum();
            if connection {
                upper_with += upper;
            } else {
                upper_without += upper;
            }
            let eval = metrics::evaluate(
                &reported,
                &truth,
                gran.depth(),
                records.len() as u64,
                elapsed,
            );
            pair[slot] = eval.throughput_mpps;
            f1_pair[slot] = eval.f1;
            rows.push(ResultRow {
                algorithm: cfg.algorithm.label().to_string(),
                config_hash: hash.clone(),
                seed,
                theta,
                memory_kb: cfg.memory_kb,
                n: records.len() as u64,
                connection,
                eval,
            });
        }
        diffs.push(pair[0] - pair[1]);
        f1_deltas.push((f1_pair[0] - f1_pair[1]).abs());
    }

    let n = diffs.len() as f64;
    let mean_diff = diffs.iter().sum::<f64>() / n;
    let t_statistic = if diffs.len() < 2 {
        f64::INFINITY * mean_diff.signum()
    } else {
        let var = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (n - 1.0);
        if var == 0.0 {
            f64::INFINITY * mean_diff.signum()
        } else {
            mean_diff / (var.sqrt() / n.sqrt())
        }
    };
    let with_rows: Vec<&ResultRow> = rows.iter().filter(|r| r.connection).collect();
    let without_rows: Vec<&ResultRow> = rows.iter().filter(|r| !r.connection).collect();
    Ok(AblationReport {
        repetitions,
        mean_with_mpps: with_rows.iter().map(|r| r.eval.throughput_mpps).sum::<f64>()
            / with_rows.len() as f64,
        mean_without_mpps: without_rows
            .iter()
            .map(|r| r.eval.throughput_mpps)
            .sum::<f64>()
            / without_rows.len() as f64,
        t_statistic,
        mean_f1_delta: f1_deltas.iter().sum::<f64>() / n,
        upper_updates_with: upper_with,
        upper_updates_without: upper_without,
        rows,
    })
}

/// Stable CSV rendering of result rows (one row per run; per-layer arrays
/// live in the JSON document).
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(
        "algorithm,config_hash,seed,theta,memory_kb,n,connection,precision,recall,f1,are,throughput_mpps\n",
    );
    for row in rows {
        let are = row
            .eval
            .are
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.algorithm,
            row.config_hash,
            row.seed,
            row.theta,
            row.memory_kb,
            row.n,
            row.connection,
            row.eval.precision,
            row.eval.recall,
            row.eval.f1,
            are,
            row.eval.throughput_mpps,
        ));
    }
    out
}

/// Accuracy-only view of the CSV (everything except the timing column),
/// byte-comparable across repeated runs.
pub fn results_csv_accuracy_columns(rows: &[ResultRow]) -> String {
    results_csv(rows)
        .lines()
        .map(|line| {
            let mut fields: Vec<&str> = line.split(',').collect();
            fields.pop();
            fields.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Write results.csv, results.json and manifest.json into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, rows: &[ResultRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), results_csv(rows))?;
    fs::write(dir.join("results.json"), serde_json::to_string_pretty(rows)?)?;
    let manifest = serde_json::json!({
        "config": cfg,
        "config_hash": cfg.config_hash(),
        "rows": rows.len(),
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}
