mod commands;
mod data;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::manifest::CliError;

#[derive(Debug, Parser)]
#[command(name = "rwbench", version, about = "Random-walk benchmarking of counting circuits")]
pub struct Cli {
    /// Seed string; every random draw derives from it.
    #[arg(long, global = true, env = "RWBENCH_SEED", default_value = "rwbench")]
    pub seed: String,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    /// Monte Carlo draws per test (overrides the config file).
    #[arg(long, global = true)]
    pub n_sim: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a noise campaign from a JSON config.
    Simulate(SimulateArgs),
    /// Maximum-likelihood fit of a counts directory.
    Fit(FitArgs),
    /// Per-block significance tests and their Fisher combination.
    Test(TestArgs),
    /// Consistency regions in the (P+, P−) plane.
    Region(RegionArgs),
    /// One-step transition kernel between consecutive endpoint laws.
    Deconv(PairArgs),
    /// Spread-condition check and recovered site transitions.
    Spread(PairArgs),
    /// Averaged periodogram of a trace column.
    Psd(PsdArgs),
    /// Consolidate a simulate output directory into CSV/JSON tables.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest into --out-dir and compare
    /// the output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Also write trace.csv, keeping every K-th record.
    #[arg(long, value_name = "K")]
    pub trace_stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Baseline,
    Fastfluct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestModel {
    Baseline,
    Slowdrift,
    Fastfluct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SlowdriftKind {
    Integrated,
    Frequency,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory of counts-block JSON files.
    #[arg(long)]
    pub data: PathBuf,
    /// Cells per block; 0 keeps the stored binning.
    #[arg(long, default_value_t = 7)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "baseline")]
    pub model: FitModel,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "baseline")]
    pub model: TestModel,
    /// Fit JSON written by `fit`; without it the data are fitted first.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Slow-drift concentration around the fitted mean.
    #[arg(long)]
    pub alpha_total: Option<f64>,
    #[arg(long, value_enum, default_value = "integrated")]
    pub slowdrift_method: SlowdriftKind,
    #[arg(long, default_value_t = rwbench::sigtest::DEFAULT_N_THETA)]
    pub n_theta: usize,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Grid half-width in decades around the fit.
    #[arg(long, default_value_t = 1.0)]
    pub decades: f64,
    /// Points per axis.
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Endpoint law after t steps: walk distribution or raw counts JSON.
    #[arg(long)]
    pub p_t: PathBuf,
    /// Endpoint law after t + 1 steps.
    #[arg(long)]
    pub p_t1: PathBuf,
    /// Bootstrap resamples (counts inputs only).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceColumn {
    PPlus,
    PMinus,
}

#[derive(Debug, Args)]
pub struct PsdArgs {
    /// Trace CSV with header n,P_plus,P_minus,x.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, value_enum, default_value = "p-plus")]
    pub column: TraceColumn,
    #[arg(long, default_value_t = rwbench::noisesim::DEFAULT_SEGMENT)]
    pub segment: usize,
    #[arg(long)]
    pub two_sided: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a `simulate` run.
    #[arg(long)]
    pub campaign: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    match commands::run(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("rwbench: {message}");
            ExitCode::from(code)
        }
    }
}
