use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vortexlab::cli::{output_dir, run, RunConfig, Scenario};

#[derive(Parser)]
#[command(name = "vortexlab", version, about = "Symplectic vortices on half-cylinders: oracles, solver, decay analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Perturbation seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Separable oracle solution, certified and analysed.
    Oracle,
    /// Relax a perturbed oracle (or a given field) onto the vortex equations.
    Solve,
    /// Decay analysis of a field CSV.
    Analyze,
    /// Slice Hessian spectrum at a critical loop.
    Hessian,
    /// Invariant suite.
    Check,
    /// Grid of oracle or solve runs over (b, k, m).
    Sweep,
}

impl From<Command> for Scenario {
    fn from(c: Command) -> Self {
        match c {
            Command::Oracle => Scenario::Oracle,
            Command::Solve => Scenario::Solve,
            Command::Analyze => Scenario::Analyze,
            Command::Hessian => Scenario::Hessian,
            Command::Check => Scenario::Check,
            Command::Sweep => Scenario::Sweep,
        }
    }
}

fn init_logging() -> Result<(), String> {
    let level = match std::env::var("VORTEXLAB_LOG").as_deref() {
        Err(_) | Ok("") | Ok("error") => log::LevelFilter::Error,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => return Err(format!("invalid config: VORTEXLAB_LOG must be error, info or debug, got {other}")),
    };
    env_logger::Builder::new().filter_level(level).init();
    Ok(())
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("invalid config: {}: {e}", path.display()))?;
            RunConfig::from_json(&text).map_err(|e| e.to_string())?
        }
        None => RunConfig::default(),
    };
    let scenario = Scenario::from(cli.command);
    if let Some(s) = config.scenario {
        if s != scenario {
            return Err(format!("invalid config: scenario is {} but the subcommand is {}", s.name(), scenario.name()));
        }
    }
    config.scenario = Some(scenario);
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_logging() {
        eprintln!("{e}");
        return ExitCode::from(3);
    }
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(3);
        }
    };
    let dir = output_dir(&config, cli.out.clone());
    let outcome = run(&config, Scenario::from(cli.command), &dir, cli.workers);
    if let Some(e) = &outcome.error {
        eprintln!("{e}");
    }
    ExitCode::from(outcome.exit_code.clamp(0, 255) as u8)
}
