use std::process::ExitCode;

use clap::Parser;
use mtt_cli::{run_experiment, Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(args) => match run_experiment(&args) {
            Ok((report, manifest)) => {
                for c in &report.trackers {
                    let median = c.runtime().map(|r| r.median).unwrap_or(f64::NAN);
                    println!("{:<10} runs {:>4}  median runtime {:.3} s", c.kind.name(), c.runs_ok, median);
                }
                println!("wrote {} files to {}", manifest.len() + 1, args.out.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
