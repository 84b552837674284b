//! `olgsim`: runs the life-cycle and OLG solvers from a JSON config and
//! writes CSV artifacts plus a manifest into a per-run directory.
//!
//! Exit codes: 0 success, 1 failed validation, 2 solver non-convergence,
//! 64 configuration error.

mod commands;
mod config;
mod output;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{EquilibriumMode, Outcome};
use config::RunConfig;
use output::{Manifest, RunDir};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("solver error: {0}")]
    Solver(olg_core::Error),
}

impl From<olg_core::Error> for CliError {
    fn from(e: olg_core::Error) -> Self {
        match e {
            olg_core::Error::Config(msg) => Self::Config(msg),
            other => Self::Solver(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Io(_) => 64,
            Self::Solver(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "olgsim", version, about = "Life-cycle and OLG economies with idiosyncratic income risk")]
struct Cli {
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base output directory (default: output.dir from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides population.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace an existing run directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form noiseless household.
    DetLifecycle,
    /// Stochastic household by Picard iteration.
    StoLifecycle,
    /// Natural borrowing-limit panels.
    Nbl,
    /// Market-clearing interest rate.
    Equilibrium {
        #[arg(value_enum)]
        mode: Mode,
    },
    /// Mean wealth at a probe age across constant rates.
    Sweep,
    /// Invariant suite; exit 1 if any check fails.
    Validate,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Lifecycle,
    Olg,
    Stationary,
}

impl Command {
    fn name(&self) -> String {
        match self {
            Self::DetLifecycle => "det-lifecycle".into(),
            Self::StoLifecycle => "sto-lifecycle".into(),
            Self::Nbl => "nbl".into(),
            Self::Equilibrium { mode } => format!("equilibrium-{}", format!("{mode:?}").to_lowercase()),
            Self::Sweep => "sweep".into(),
            Self::Validate => "validate".into(),
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.population.seed = seed;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let config = load(cli)?;
    let hash = config.hash();
    let base = cli.out.clone().unwrap_or_else(|| PathBuf::from(&config.output.dir));
    let name = cli.command.name();
    let dir = RunDir::create(&base, &name, &hash, cli.force)?;
    let start = Instant::now();
    let outcome: Outcome = match &cli.command {
        Command::DetLifecycle => commands::det_lifecycle(&config, &dir)?,
        Command::StoLifecycle => commands::sto_lifecycle(&config, &dir)?,
        Command::Nbl => commands::nbl(&config, &dir)?,
        Command::Equilibrium { mode } => {
            let mode = match mode {
                Mode::Lifecycle => EquilibriumMode::Lifecycle,
                Mode::Olg => EquilibriumMode::Olg,
                Mode::Stationary => EquilibriumMode::Stationary,
            };
            commands::equilibrium(&config, mode, &dir)?
        }
        Command::Sweep => commands::sweep(&config, &dir)?,
        Command::Validate => validate::validate(&config, &dir)?,
    };
    let manifest = Manifest {
        command: name.clone(),
        config_hash: hash,
        seed: config.population.seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        convergence: outcome.convergence,
        invariants: outcome.invariants.clone(),
        config,
    };
    let path = dir.finish(&manifest)?;
    if matches!(cli.command, Command::Validate) {
        print!("{}", output::table(&outcome.invariants));
    }
    println!("{}", path.display());
    let code = if matches!(cli.command, Command::Validate) && !outcome.invariants.iter().all(|f| f.passed) {
        1
    } else if !outcome.converged {
        eprintln!("{name}: solver did not converge; see the residual history in {}", path.display());
        2
    } else {
        0
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("olgsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
