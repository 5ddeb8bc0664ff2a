use std::process::ExitCode;

use clap::Parser;
use multising_cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = run(&cli);
    if let Err(e) = &outcome {
        eprintln!("{e}");
    }
    ExitCode::from(exit_code(&outcome))
}
