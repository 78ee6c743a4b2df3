use std::process::ExitCode;

use clap::Parser;
use shearmix_cli::app::{run, Cli};
use shearmix_cli::config::ConfigError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            for w in &outcome.manifest.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("outputs in {}", outcome.out_dir.display());
            match outcome.failed {
                Some(reason) => {
                    eprintln!("error: {reason}");
                    ExitCode::from(1)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
