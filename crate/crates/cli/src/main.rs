mod args;
mod commands;
mod error;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, EXIT_INTERNAL};

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prune(a) => commands::prune(a),
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cost(a) => commands::cost(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on its own for malformed command lines.
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL as u8),
    }
}
