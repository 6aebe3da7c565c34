//! Command-line harness for the `geoflow` solvers: single solves, the
//! surface benchmark table, decay-rate sweeps and repeated warm-started
//! solves. Every command writes CSV with a header row.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Method;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("output error: {0}")]
    Output(String),
    #[error("solver error: {0}")]
    Solver(#[from] geoflow::Error),
    /// Some rows of a table failed; the table itself was written.
    #[error("{0} of the solves failed (see the `error` column)")]
    PartialFailure(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Output(_) => 1,
            Self::Solver(_) | Self::PartialFailure(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "geoflow", version, about = "Geodesics by geometric heat flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults to the unit-sphere benchmark.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// CSV destination (stdout when absent). Geodesic and rate files are
    /// written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Add the egg box row to `bench`.
    #[arg(long, global = true)]
    pub eggbox: bool,
    #[arg(long, global = true, value_enum)]
    pub method: Option<Method>,
    /// Seed for randomized schedules; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use classic RK4 with this fixed step instead of the configured integrator.
    #[arg(long = "fixed-step", global = true, value_name = "DT")]
    pub fixed_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve one boundary value problem.
    Solve,
    /// Surface benchmark table (sphere, torus, optionally egg box).
    Bench,
    /// Energy traces and fitted decay rates for a list of flow gains.
    SweepAlpha,
    /// Fitted decay rates on spheres of several radii.
    SweepRadius,
    /// Sequence of warm-started solves along a schedule of start points.
    Repeat,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => config::RunConfig::load(path)?,
        None => config::RunConfig::sphere_benchmark(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dt) = cli.fixed_step {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CliError::Config(format!("--fixed-step must be positive, got {dt}")));
        }
        cfg.integrator = config::IntegratorSpec::Rk4 { dtau: dt };
    }
    if let Some(m) = cli.method {
        cfg.method = Some(m);
    }
    let out = cli.out.clone().or_else(|| cfg.output.clone());
    cfg.validate()?;
    let out = out.as_deref();
    match cli.command {
        Command::Solve => commands::solve(&cfg, out),
        Command::Bench => commands::bench(&cfg, out, cli.eggbox),
        Command::SweepAlpha => commands::sweep_alpha(&cfg, out),
        Command::SweepRadius => commands::sweep_radius(&cfg, out),
        Command::Repeat => commands::repeat(&cfg, out),
    }
}

pub fn main_with(cli: &Cli) -> ExitCode {
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("geoflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
