use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use resav_harness::{cmd_compare, cmd_converge, cmd_run, parse_with_overrides, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "resav", version, about = "Relaxed exponential SAV solvers on periodic grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its energy record and snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config entry, e.g. `--set dt=0.01`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Error and observed order for each entry of `dt_list`.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run several configurations and merge their records.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        config: Vec<PathBuf>,
        /// Applied to every configuration.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load(path: &PathBuf, overrides: &[String]) -> Result<RunConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
    Ok(parse_with_overrides(&text, overrides)?)
}

fn init_threads() -> Result<(), HarnessError> {
    let Ok(v) = std::env::var("RESAV_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Usage(format!("RESAV_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Usage(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    init_threads()?;
    match cli.command {
        Command::Run { config, overrides } => {
            let summary = cmd_run(&load(&config, &overrides)?)?;
            println!("{summary}");
        }
        Command::Converge { config, overrides } => {
            let table = cmd_converge(&load(&config, &overrides)?)?;
            println!("{table}");
        }
        Command::Compare { config, overrides } => {
            let cfgs = config.iter().map(|p| load(p, &overrides)).collect::<Result<Vec<_>, _>>()?;
            let csv = cmd_compare(&cfgs)?;
            println!("merged record: {}", csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
