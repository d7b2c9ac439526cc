use std::process::ExitCode;

use clap::Parser;
use sohem::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
