use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use kernelnet_cli::commands::{self, Run};
use kernelnet_cli::{CliResult, Config};

#[derive(Parser)]
#[command(name = "kernelnet", version, about = "Kernelized classification layer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for datasets, checkpoints and metrics.jsonl.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Generate the synthetic train/test CSVs.
    GenData,
    /// Train one model and save a checkpoint.
    Train,
    /// Compare kernel variants, activations and rectification.
    Ablate,
    /// Distill a teacher into kernelized and linear students.
    Distill,
    /// Accuracy versus labeling budget for each sampler.
    Active,
    /// Run the gradient, PSD and series-limit property suites.
    Check,
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("plain data serializes"));
}

fn execute(cli: &Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let run = Run::new(config, cli.out.clone(), cli.seed)?;
    match cli.command {
        Verb::GenData => print(&commands::gen_data(&run)?),
        Verb::Train => print(&commands::train(&run)?),
        Verb::Ablate => print(&commands::ablate(&run)?),
        Verb::Distill => print(&commands::distill(&run)?),
        Verb::Active => print(&commands::active(&run)?),
        Verb::Check => {
            let results = commands::check(&run)?;
            for r in &results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                println!("{tag}  {}  [{}]  {}", r.name, r.tolerance, r.detail);
            }
            commands::require_all_passed(&results)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
