mod args;
mod commands;
mod data;
mod output;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::{Cli, Command};

/// Failures raised by the CLI itself rather than the library.
#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    pub fn parse(message: String) -> Self {
        CliError { kind: "parse", message }
    }

    pub fn validation(message: String) -> Self {
        CliError { kind: "validation", message }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Converged,
    MaxIter,
    Failed,
}

impl Status {
    fn code(self) -> ExitCode {
        match self {
            Status::Converged => ExitCode::SUCCESS,
            Status::MaxIter => ExitCode::from(2),
            Status::Failed => ExitCode::FAILURE,
        }
    }
}

pub fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": kind, "message": message }).to_string()
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return e.kind;
        }
        if let Some(e) = cause.downcast_ref::<mist::MistError>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if matches!(e.kind(), csv::ErrorKind::Io(_)) { "io" } else { "parse" };
        }
        if cause.is::<serde_json::Error>() {
            return "parse";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    if let Some(out) = &cli.emit_penalty_grid {
        return commands::penalty_grid(out, cli.grid_lambda);
    }
    match &cli.command {
        Some(Command::Fit(a)) => commands::fit(a),
        Some(Command::Path(a)) => commands::path(a),
        Some(Command::Simulate(a)) => commands::simulate(a, cli.threads),
        Some(Command::BenchAccel(a)) => commands::bench_accel(a, cli.threads),
        None => Err(CliError::validation("no command given".into()).into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::FAILURE;
        }
        Err(e) => {
            let text = e.render().to_string();
            let line = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!("{}", error_json("usage", line.trim_start_matches("error: ")));
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(status) => status.code(),
        Err(err) => {
            eprintln!("{}", error_json(error_kind(&err), &format!("{err:#}")));
            ExitCode::FAILURE
        }
    }
}
