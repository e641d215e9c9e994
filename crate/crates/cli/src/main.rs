use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

mod config;
mod error;
mod experiments;

use error::CliError;

/// Runs the experiments of the aniso-privacy library from JSON configs.
#[derive(Parser)]
#[command(name = "aniso", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its outputs and a manifest.
    Run { config: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Print version information.
    Version,
}

fn versions() -> serde_json::Value {
    json!({
        "aniso-cli": env!("CARGO_PKG_VERSION"),
        "aniso-privacy": env!("CARGO_PKG_VERSION"),
    })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ANISO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Validation(vec![error::FieldError::new("ANISO_THREADS", "must be a positive integer")]))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Io(e.to_string()))
}

fn validate(path: &Path) -> Result<serde_json::Value, CliError> {
    let loaded = config::load(path)?;
    let prepared = experiments::prepare(&loaded)?;
    Ok(json!({
        "status": "ok",
        "errors": [],
        "experiment": loaded.config.experiment.kind(),
        "config_sha256": loaded.hash(),
        "output_dir": loaded.output_dir(),
        "derived": prepared.derived,
    }))
}

fn run(path: &Path) -> Result<serde_json::Value, CliError> {
    let start = Instant::now();
    let started_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let loaded = config::load(path)?;
    let prepared = experiments::prepare(&loaded)?;
    let dir = loaded.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let outputs = experiments::execute(&prepared.plan, &dir)?;
    let manifest = json!({
        "experiment": loaded.config.experiment.kind(),
        "config_sha256": loaded.hash(),
        "seed": loaded.config.seed,
        "versions": versions(),
        "outputs": outputs,
        "started_at_unix": started_at,
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(json!({
        "status": "ok",
        "output_dir": dir,
        "outputs": outputs,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Run { config } => run(config),
        Command::Validate { config } => validate(config),
        Command::Version => Ok(json!({ "versions": versions() })),
    });
    match result {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", serde_json::to_string_pretty(&e.to_json()).expect("error serializes"));
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
