//! `repcam`: server-side training and fusion, client-side inference and
//! scoring, and delivery cost accounting.

mod args;
mod commands;
mod layout;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or missing inputs.
    Usage(String),
    /// Inputs that parse but do not make sense together.
    Invalid(String),
    /// `verify-fuse` found a gap above tolerance.
    Verify(String),
    /// Training diverged; diagnostics were written to `dump`.
    Numeric { message: String, dump: PathBuf },
    Core(repcam::Error),
}

impl From<repcam::Error> for CliError {
    fn from(e: repcam::Error) -> Self {
        Self::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Core(repcam::Error::MissingFile(_)) => 1,
            Self::Numeric { .. } | Self::Core(repcam::Error::NumericFailure(_)) => 3,
            Self::Invalid(_) | Self::Verify(_) | Self::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Invalid(m) | Self::Verify(m) => f.write_str(m),
            Self::Numeric { message, dump } => write!(f, "{message}; diagnostics written to {}", dump.display()),
            Self::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Chunk(a) => commands::chunk(a),
        Command::Train(a) => commands::train(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::VerifyFuse(a) => commands::verify_fuse(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::CostReport(a) => commands::cost_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
