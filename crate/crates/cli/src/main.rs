use std::process::ExitCode;

use clap::Parser;
use medsens_cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.config) {
        Ok(Some(json)) => {
            print!("{json}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("medsens: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
