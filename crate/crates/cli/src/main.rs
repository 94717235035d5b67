mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use semtree_core::Error;

use args::{Cli, Command};

/// 2 bad input, 3 incompatible checkpoint/ontology/data, 4 operation not
/// available in the model's mode, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Compatibility(_)) => 3,
        Some(Error::Mode(_)) => 4,
        Some(Error::Math(_) | Error::Contract(_)) | None => 1,
        Some(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Adapt(a) => commands::adapt_cmd(a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Trace(a) => commands::trace_cmd(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
