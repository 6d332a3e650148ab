//! Command-line front end; the work is done in [`expmoment::cli`].

use clap::Parser;
use expmoment::cli::{self, Command, RunConfig};
use std::path::Path;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "expmoment", version, about = "Exponential moment problems, spectral certificates and null controls")]
struct Cli {
    /// Working precision in decimal digits (default: $EXPMOMENT_DIGITS or 80).
    #[arg(long, global = true)]
    precision_digits: Option<u32>,
    /// Seed for random initial states and targets.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let result = (|| {
        if let Some(n) = args.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .map_err(|e| cli::CliError::Validation(format!("cannot size the thread pool: {e}")))?;
        }
        let precision_digits = match args.precision_digits {
            Some(d) => d,
            None => cli::default_digits()?,
        };
        let config = RunConfig { pipeline: args.command, precision_digits, seed: args.seed };
        cli::run(&config, Path::new("."))
    })();
    match result {
        Ok(outcome) => {
            for p in &outcome.artifacts {
                println!("{}", p.display());
            }
            if let Some(msg) = &outcome.unconverged {
                eprintln!("{}", cli::CliError::Unconverged(msg.clone()).diagnostic());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
