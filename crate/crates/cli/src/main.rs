//! `occfield`: synthesize scenes, fit voxel feature fields, and query or
//! evaluate the result.

mod args;
mod commands;
mod output;

use args::{Cli, Command};
use clap::Parser;
use std::process::ExitCode;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flag combination or value (exit 1).
    Usage(String),
    /// Anything raised by the pipeline: config/data errors exit 2, numeric
    /// failures exit 3.
    Core(occfield::Error),
}

impl From<occfield::Error> for CliError {
    fn from(e: occfield::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(occfield::Error::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        (false, 2) => "debug",
        _ => "trace",
    };
    let env = env_logger::Env::default().filter_or("OCCFIELD_LOG", level);
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let g = &cli.global;
    let report = match &cli.command {
        Command::Synth(a) => commands::synth(a, g)?,
        Command::Fit(a) => commands::fit(a, g)?,
        Command::Render(a) => commands::render(a, g)?,
        Command::Reduce(a) => commands::reduce(a, g)?,
        Command::Segment(a) => commands::segment(a, g)?,
        Command::Retrieve(a) => commands::retrieve(a, g)?,
        Command::Eval(a) => commands::eval(a, g)?,
        Command::Gradcheck(a) => commands::gradcheck(a, g)?,
    };
    report.print(g.json);
    report.into_result()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.global.verbose, cli.global.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("occfield: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
