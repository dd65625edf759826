use std::io;
use std::process::ExitCode;

use clap::Parser;
use impalloc::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli, io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("impalloc: {e}");
            e.into()
        }
    }
}
