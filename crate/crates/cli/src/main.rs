use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Road-marking place recognition and loop-candidate detection.
#[derive(Debug, Parser)]
#[command(name = "roadseq", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Output directory; created if missing. A manifest.json is written into it.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Engine config file (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Skip malformed input lines with a warning instead of failing.
    #[arg(long, global = true)]
    pub skip_bad_records: bool,
    /// More diagnostics on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world and drive it, writing session logs and truth tables.
    Simulate(SimulateArgs),
    /// Build a sequence database from session logs.
    Ingest(IngestArgs),
    /// Find matching sequence pairs in a database or in session logs.
    Match(MatchArgs),
    /// Sweep the window size k over a simulated scenario and score the candidates.
    Sweep(SweepArgs),
    /// Time single-sequence inquiries against synthetic databases.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SensorKind {
    /// Image centroids plus camera poses.
    Pixel,
    /// Ground-plane points.
    Ground,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Place recognition across sessions.
    Place,
    /// Loop detection within a session.
    Loop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    /// Signature-indexed matching.
    Indexed,
    /// All unordered pairs.
    Batch,
    /// Replay with an inquiry after every database update.
    Incremental,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Length of the circular two-lane route (m).
    #[arg(long, default_value_t = 2500.0)]
    pub circumference: f64,
    /// Length of the re-driven stretch at the end of the drive (m); 0 for none.
    #[arg(long, default_value_t = 500.0)]
    pub revisit: f64,
    /// Number of drives over the same world.
    #[arg(long, default_value_t = 1)]
    pub sessions: u32,
    #[arg(long, value_enum, default_value_t = SensorKind::Pixel)]
    pub sensor: SensorKind,
    /// Ground-position noise (m).
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    /// Misdetection probability.
    #[arg(long, default_value_t = 0.1)]
    pub miss: f64,
    /// Label misclassification probability.
    #[arg(long, default_value_t = 0.05)]
    pub flip: f64,
    /// Mean spurious detections per frame.
    #[arg(long, default_value_t = 0.2)]
    pub clutter: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct EngineOverrides {
    /// Window size (markings per sequence); overrides the config file.
    #[arg(long)]
    pub k: Option<usize>,
    /// Per-gap tolerance (m); overrides the config file.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Session directory with poses.jsonl and detections.jsonl or observations.jsonl. Repeatable.
    #[arg(long = "session", required = true)]
    pub sessions: Vec<PathBuf>,
    #[command(flatten)]
    pub engine: EngineOverrides,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Database file written by `ingest`.
    #[arg(
        long,
        conflicts_with = "sessions",
        required_unless_present = "sessions"
    )]
    pub database: Option<PathBuf>,
    /// Session directory to ingest before matching. Repeatable.
    #[arg(long = "session")]
    pub sessions: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = PathArg::Indexed)]
    pub path: PathArg,
    #[command(flatten)]
    pub engine: EngineOverrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Window sizes, `a:b` inclusive or a single value.
    #[arg(long, default_value = "2:6")]
    pub k: String,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Output directory of `simulate` to evaluate; simulates from --seed when absent.
    #[arg(long)]
    pub sim: Option<PathBuf>,
    /// Per-gap tolerance (m); overrides the config file.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Database sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0usize, 1000, 10000])]
    pub sizes: Vec<usize>,
    /// Inquiries per size (at least 100).
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    #[command(flatten)]
    pub engine: EngineOverrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match commands::run(&cli, std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
