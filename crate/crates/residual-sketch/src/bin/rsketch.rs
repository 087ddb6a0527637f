//! Benchmark CLI: generate traces, run experiments, ablate the residual
//! connection, and export exact ground truth.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use residual_sketch::config::{Algorithm, CountUnit, ExperimentConfig, TraceSource};
use residual_sketch::error::{Error, Result};
use residual_sketch::hierarchy::{Granularity, GranularityKind};
use residual_sketch::oracle::ExactCounts;
use residual_sketch::runner;
use residual_sketch::sketch::hhh_csv;
use residual_sketch::trace::{
    self, SynthSpec, TraceFormat, TraceManifest, ZipfSpec,
};

#[derive(Parser)]
#[command(name = "rsketch", about = "Hierarchical heavy hitter sketch benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace (plus a manifest recording the generator parameters).
    Gen(GenArgs),
    /// Run an experiment sweep and write results.csv / results.json.
    Run(RunArgs),
    /// Paired with/without residual-connection benchmark.
    Ablate(AblateArgs),
    /// Export exact ground-truth HHHs for a trace as CSV.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output trace path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "bin")]
    format: CliFormat,
    /// Zipf skew exponent.
    #[arg(long, default_value_t = 1.03)]
    skew: f64,
    /// Key-space size.
    #[arg(long, default_value_t = 100_000)]
    keys: u64,
    /// Records to generate.
    #[arg(long, default_value_t = 2_000_000)]
    length: u64,
    #[arg(long)]
    seed: u64,
    /// Apply the top-k skew modification after generation.
    #[arg(long, default_value_t = false)]
    synth: bool,
    #[arg(long, default_value_t = 1000)]
    top_k: usize,
    /// Target share of total value carried by the top-k keys.
    #[arg(long, default_value_t = 0.3)]
    mass_fraction: f64,
    #[arg(long, default_value_t = 20)]
    prefix_min: u8,
    #[arg(long, default_value_t = 24)]
    prefix_max: u8,
    #[arg(long, default_value_t = 64)]
    fan_out: u32,
    #[arg(long, default_value_t = 256)]
    shed_targets: usize,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON; when given it overrides all other flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace file to replay (omit to generate a Zipf stream).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bin")]
    format: CliFormat,
    #[arg(long, value_enum, default_value = "residual_coco")]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 256.0)]
    memory_kb: f64,
    /// Level prefix lengths, comma separated (e.g. 32,24,12).
    #[arg(long, value_delimiter = ',', default_values_t = vec![32u8, 12u8])]
    levels: Vec<u8>,
    /// Report thresholds theta, comma separated fractions.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.001f64])]
    theta: Vec<f64>,
    /// Run seeds, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    seed: Vec<u64>,
    #[arg(long, default_value_t = 2)]
    g: usize,
    #[arg(long, default_value_t = 0.8)]
    beta: f64,
    #[arg(long)]
    expected_window: Option<u64>,
    #[arg(long, value_enum, default_value = "packets")]
    unit: CountUnit,
    /// Zipf generator knobs used when --trace is absent.
    #[arg(long, default_value_t = 1.03)]
    skew: f64,
    #[arg(long, default_value_t = 100_000)]
    keys: u64,
    #[arg(long, default_value_t = 2_000_000)]
    length: u64,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Paired timed repetitions.
    #[arg(long, default_value_t = 10)]
    reps: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum, default_value = "bin")]
    format: CliFormat,
    #[arg(long)]
    theta: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bit")]
    granularity: CliGranularity,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliFormat {
    Csv,
    Bin,
}

impl From<CliFormat> for TraceFormat {
    fn from(value: CliFormat) -> Self {
        match value {
            CliFormat::Csv => TraceFormat::Csv,
            CliFormat::Bin => TraceFormat::Bin,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliGranularity {
    Bit,
    Byte,
}

fn main() {
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => gen(args),
        Command::Run(args) => {
            let cfg = experiment_config(&args)?;
            let rows = runner::run_experiment(&cfg)?;
            runner::write_outputs(&args.out, &cfg, &rows)?;
            println!("{}", runner::results_csv(&rows).trim_end());
            println!("# wrote {}", args.out.display());
            Ok(())
        }
        Command::Ablate(args) => {
            let cfg = experiment_config(&args.run)?;
            let report = runner::run_connection_ablation(&cfg, args.reps)?;
            runner::write_outputs(&args.run.out, &cfg, &report.rows)?;
            let summary = serde_json::to_string_pretty(&serde_json::json!({
                "repetitions": report.repetitions,
                "mean_with_mpps": report.mean_with_mpps,
                "mean_without_mpps": report.mean_without_mpps,
                "t_statistic": report.t_statistic,
                "mean_f1_delta": report.mean_f1_delta,
                "upper_updates_with": report.upper_updates_with,
                "upper_updates_without": report.upper_updates_without,
            }))?;
            std::fs::write(args.run.out.join("ablation.json"), &summary)?;
            println!("{summary}");
            Ok(())
        }
        Command::Oracle(args) => oracle(args),
    }
}

fn gen(args: GenArgs) -> Result<()> {
    let zipf = ZipfSpec {
        skew: args.skew,
        keys: args.keys,
        length: args.length,
        seed: args.seed,
    };
    let mut records = trace::gen_zipf(&zipf)?;
    let synth = if args.synth {
        let spec = SynthSpec {
            top_k: args.top_k,
            mass_fraction: args.mass_fraction,
            agg_prefix_min: args.prefix_min,
            agg_prefix_max: args.prefix_max,
            fan_out: args.fan_out,
            shed_targets: args.shed_targets,
            seed: args.seed,
        };
        records = trace::skew_modify(records, &spec)?;
        Some(spec)
    } else {
        None
    };
    let format: TraceFormat = args.format.into();
    trace::write_trace(&args.out, format, &records)?;
    let manifest = TraceManifest::describe(&records, format, Some(zipf), synth);
    let manifest_path = args.out.with_extension("manifest.json");
    manifest.write(&manifest_path)?;
    println!(
        "# wrote {} ({} records) and {}",
        args.out.display(),
        records.len(),
        manifest_path.display()
    );
    Ok(())
}

fn experiment_config(args: &RunArgs) -> Result<ExperimentConfig> {
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        return Ok(cfg);
    }
    let trace = match &args.trace {
        Some(path) => TraceSource::Path {
            path: path.to_string_lossy().into_owned(),
            format: args.format.into(),
        },
        None => TraceSource::Zipf(ZipfSpec {
            skew: args.skew,
            keys: args.keys,
            length: args.length,
            seed: 0,
        }),
    };
    let cfg = ExperimentConfig {
        trace,
        algorithm: args.algorithm,
        memory_kb: args.memory_kb,
        levels: args.levels.clone(),
        thetas: args.theta.clone(),
        seeds: args.seed.clone(),
        width_bits: 32,
        granularity: GranularityKind::Bit,
        g: match args.algorithm.block_kind() {
            residual_sketch::block::BlockKind::Uss => 1,
            residual_sketch::block::BlockKind::Coco => args.g,
        },
        beta: args.beta,
        theta_abs: None,
        expected_window: args.expected_window,
        unit: args.unit,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn oracle(args: OracleArgs) -> Result<()> {
    let gran = match args.granularity {
        CliGranularity::Bit => Granularity::ipv4_bit(),
        CliGranularity::Byte => Granularity::ipv4_byte(),
    };
    let records = trace::read_trace(&args.trace, args.format.into())?;
    if records.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let counts = ExactCounts::from_records(gran.clone(), &records)?;
    let hhh = counts.exact_hhh(args.theta)?;
    let csv = hhh_csv(&gran, &hhh);
    match args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
