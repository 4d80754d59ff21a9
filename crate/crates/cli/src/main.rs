//! Operator entry point: data prep, splits, training, prediction, scoring,
//! ablations, and robustness runs. Exit codes: 0 success, 1 runtime
//! failure, 2 usage/validation error.

mod commands;
mod manifest;
mod opts;
mod util;

use clap::Parser;

use opts::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Split(args) => commands::cmd_split(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Predict(args) => commands::cmd_predict(args),
        Command::Score(args) => commands::cmd_score(args),
        Command::Robustness(args) => commands::cmd_robustness(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::Demos(args) => commands::cmd_demos(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
