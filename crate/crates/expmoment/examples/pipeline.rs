//! Runs a small spectra → verify → moment chain through the artifact layer
//! and prints where each file went.
//!
//! Run with `cargo run --release --example pipeline -- <output dir>`.

use expmoment::cli::{run, Command, PipelineArgs, PipelineFile, RunConfig};
use std::path::{Path, PathBuf};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "expmoment-example-run".into()));
    let mut file = PipelineFile::default_chain();
    file.stages.retain(|s| matches!(s, Command::Spectra(_) | Command::Verify(_) | Command::Moment(_)));
    let config_path = std::env::temp_dir().join("expmoment-example-pipeline.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&file)?)?;
    let config = RunConfig {
        pipeline: Command::Pipeline(PipelineArgs { config: Some(config_path), out_dir }),
        precision_digits: 60,
        seed: 0,
    };
    match run(&config, Path::new(".")) {
        Ok(outcome) => {
            for p in &outcome.artifacts {
                println!("{}", p.display());
            }
            println!("exit code {}", outcome.exit_code());
        }
        Err(e) => println!("{}", e.diagnostic()),
    }
    Ok(())
}
