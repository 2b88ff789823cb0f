use clap::Parser;
use dubins_pctl::cli::{self, Cli};
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli::run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error[{}]: {e}", cli::category(&e));
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
