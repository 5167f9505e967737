use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reefsurvey_cli::{commands, CliError, RunConfig};

/// Deterministic reef-survey simulator.
///
/// Exit codes: 0 success, 2 config error, 3 data error.
#[derive(Parser)]
#[command(name = "reefsurvey", version, after_long_help = RunConfig::documented_defaults())]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// World file for `survey` and `track`; overrides `inputs.world`.
    #[arg(long, global = true)]
    world: Option<PathBuf>,
    /// Mission log (file or directory) for `analyze`; overrides `inputs.log`.
    #[arg(long, global = true)]
    log: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate a world and write world.json plus a habitat map.
    WorldGen,
    /// Fly the lawnmower survey over a world; writes the mission log, WAVs and EKF errors.
    Survey,
    /// Snap detection, habitat topics and regression on a mission log.
    Analyze,
    /// Visual-servo tracking episode; writes the track log, metrics and trajectory.
    Track,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = cli.out {
        config.out = o;
    }
    if let Some(w) = cli.world {
        config.inputs.world = Some(w);
    }
    if let Some(l) = cli.log {
        config.inputs.log = Some(l);
    }
    let written = match cli.command {
        Cmd::WorldGen => commands::world_gen(&config)?,
        Cmd::Survey => commands::survey(&config)?,
        Cmd::Analyze => commands::analyze(&config)?,
        Cmd::Track => commands::track(&config)?.0,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reefsurvey: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
