use clap::Parser;
use smalldomain_cli::{run, Cli};
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(artifacts) => {
            for a in artifacts {
                println!("{} {} {}", a.sha256, a.bytes, a.file);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("smalldomain {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
