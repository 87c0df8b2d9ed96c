mod commands;
mod config;
mod report;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use clap::Parser;

use config::{Cli, RunConfig, SEED_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] unravel_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(_) => 4,
        }
    }
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let cfg = RunConfig::resolve(cli, std::env::var(SEED_ENV).ok())?;
    if let Some(threads) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let report = commands::execute(&cfg)?;
    match &cfg.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            report.write(&cfg, &mut w)?;
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
        None => report.write(&cfg, io::stdout().lock())?,
    }
    for check in &report.checks {
        eprintln!("{} {}: {}", if check.pass { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("unravel: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
