use std::process::ExitCode;

use clap::Parser;
use rmsd_cli::sim::{run, SimArgs};

fn main() -> ExitCode {
    let args = SimArgs::parse();
    let mut stdout = std::io::stdout().lock();
    match run(&args, &mut stdout) {
        Ok(report) if report.passed() => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
