mod commands;
mod config;

use std::process::ExitCode;

use alphanet::ErrorKind;
use clap::{Parser, Subcommand};

use config::Overrides;

/// Train per-class alpha sub-modules that rebuild weak tail-class
/// classifiers from their nearest strong neighbors.
#[derive(Parser, Debug)]
#[command(name = "alphanet", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic long-tailed feature dataset.
    Datagen(Overrides),
    /// Train the frozen logistic-regression classifier bank.
    Baseline(Overrides),
    /// Train the alpha model and export the composed bank.
    Train(Overrides),
    /// Split-wise and per-class reports for a composed bank.
    Eval(Overrides),
    /// Repeat train and eval over a grid of gamma or top-k values.
    Sweep(Overrides),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (run, flags): (fn(&config::RunConfig) -> alphanet::Result<()>, Overrides) =
        match cli.command {
            Cmd::Datagen(o) => (commands::datagen, o),
            Cmd::Baseline(o) => (commands::baseline, o),
            Cmd::Train(o) => (commands::train, o),
            Cmd::Eval(o) => (commands::eval, o),
            Cmd::Sweep(o) => (commands::sweep, o),
        };
    match flags.resolve().and_then(|cfg| run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Io => 2,
                ErrorKind::Numeric => 3,
            })
        }
    }
}
