use std::process::ExitCode;

use clap::Parser;

mod commands;

use commands::{Cli, Failure};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("grc-attn: {f}");
            ExitCode::from(match f {
                Failure::Usage(_) => 2,
                Failure::Verification(_) | Failure::Runtime(_) => 1,
            })
        }
    }
}
