use std::io;
use std::process::ExitCode;

use clap::Parser;
use scabd_cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(execute(
        cli,
        &mut io::stdout().lock(),
        &mut io::stderr().lock(),
    ))
}
