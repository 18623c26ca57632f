use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robust_contract_cli::{execute, CliError, Command, Run, RunConfig, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "robust-contract", version, about = "Robust principal-agent contracting under volatility uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the environment and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the agent's robust value for a fixed contract.
    SolveAgent,
    /// Solve the principal's problem and extract the optimal contract.
    SolvePrincipal,
    /// Solve, then simulate the output and continuation value.
    Simulate,
    /// Check a prior solve-principal directory.
    Verify,
    /// Repeat a pipeline over a parameter axis.
    Sweep,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let (mut config, _) = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        if let Some(sim) = config.sim.as_mut() {
            sim.seed = seed;
        }
    }
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    // A configured output_dir is relative to the config file.
    let out = cli
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| config.output_dir.as_ref().map(|d| base.join(d)))
        .ok_or_else(|| CliError::Config(format!("no output directory: pass --out, set {OUT_DIR_ENV} or `output_dir`")))?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let command = match cli.command {
        Cmd::SolveAgent => Command::SolveAgent,
        Cmd::SolvePrincipal => Command::SolvePrincipal,
        Cmd::Simulate => Command::Simulate,
        Cmd::Verify => Command::Verify,
        Cmd::Sweep => Command::Sweep,
    };
    execute(command, &Run { config, base, out })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("robust-contract: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
