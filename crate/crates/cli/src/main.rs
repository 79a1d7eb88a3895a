//! `tagdiff`: compute self-diffusion matrices, run cross-diffusion
//! simulations and check the invariant suite.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tagdiff_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "tagdiff", version, about = "Tagged-particle self-diffusion and cross-diffusion simulation")]
struct Cli {
    /// More log output (repeat for debug level); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimise the combined functional and write the per-level values A_{M,l}.
    Compute(ComputeArgs),
    /// Assemble D_s(l/N) by polarization and write the table, trace file and model.
    Matrix(MatrixArgs),
    /// Run the finite-volume cross-diffusion simulation.
    Simulate(SimulateArgs),
    /// Run the invariant suite; exit code 3 if any check fails.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LatticeArgs {
    /// Half-width M of the box {-M..M}^d.
    #[arg(long = "M", default_value_t = 1)]
    pub m: usize,
    /// Lattice dimension.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// `preset:square2d` (M=1, d=2, unit jumps with rate 1/4), `preset:nn`
    /// (nearest neighbours for the given M and d) or an explicit list
    /// `x,y:p;x,y:p;...` (rates optional, uniform when omitted).
    #[arg(long, default_value = "preset:square2d")]
    pub jumps: String,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Lsq,
    Als,
    Both,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "lsq")]
    pub method: MethodArg,
    /// Number of random ALS starts.
    #[arg(long, default_value_t = 100)]
    pub restarts: usize,
    /// Seed of the ALS starts.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// ALS relative stopping tolerance.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// ALS sweep limit.
    #[arg(long, default_value_t = 500)]
    pub max_sweeps: usize,
    /// Least-squares (CGLS) relative tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub lsq_tol: f64,
}

/// Direction `u` as comma-separated components, e.g. `1,0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionArg(pub Vec<f64>);

impl std::str::FromStr for DirectionArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad component `{t}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(DirectionArg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ComputeArgs {
    #[command(flatten)]
    pub lattice: LatticeArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Direction(s) u; repeat for several. Defaults to e_i and e_i + e_j.
    #[arg(long = "u")]
    pub u: Vec<DirectionArg>,
    /// Output CSV of per-level values.
    #[arg(long, default_value = "levels.csv")]
    pub out: std::path::PathBuf,
    /// Optional CSV with one line per ALS restart.
    #[arg(long)]
    pub restart_report: Option<std::path::PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MatrixArgs {
    #[command(flatten)]
    pub lattice: LatticeArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output CSV `l,rho,D11,D12,D22`.
    #[arg(long, default_value = "ds_table.csv")]
    pub out: std::path::PathBuf,
    /// Trace data file (gnuplot columns).
    #[arg(long, default_value = "trace.dat")]
    pub trace: std::path::PathBuf,
    /// Number of intervals sampled in the trace file.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Model file consumed by `simulate --ds`.
    #[arg(long, default_value = "ds_model.json")]
    pub model: std::path::PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: std::path::PathBuf,
    /// Self-diffusion model written by `matrix`; overrides `ds_model` in the config.
    #[arg(long)]
    pub ds: Option<std::path::PathBuf>,
    /// Output directory for snapshots, diagnostics and the manifest.
    #[arg(long, default_value = "run")]
    pub out_dir: std::path::PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ValidateArgs {
    /// Seed of the randomised checks.
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Use this model for the scheme checks instead of a fresh least-squares model.
    #[arg(long)]
    pub ds: Option<std::path::PathBuf>,
    /// Steps of the conservation run.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0} validation check(s) failed")]
    Validation(usize),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 3,
            CliError::Core(e) if is_numerical(e) => 2,
            CliError::Core(_) => 1,
        }
    }
}

fn is_numerical(e: &CoreError) -> bool {
    match e {
        CoreError::LsqNotConverged { .. }
        | CoreError::NotPsd { .. }
        | CoreError::NonFinite(_)
        | CoreError::SingularJacobian(_)
        | CoreError::NewtonNotConverged { .. } => true,
        CoreError::TimeStep { source, .. } => is_numerical(source),
        _ => false,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Compute(a) => commands::compute(a, &argv),
        Command::Matrix(a) => commands::matrix(a, &argv),
        Command::Simulate(a) => commands::simulate(a, &argv),
        Command::Validate(a) => commands::validate(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
