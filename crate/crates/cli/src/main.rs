use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use dsmis_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dsmis_cli::run(&cli) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dsmis: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
