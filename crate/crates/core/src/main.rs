use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use levelagg::cli::{run, Command, Preset, RunManifest};

/// Level-set aggregated density estimation and simulation experiments.
#[derive(Debug, Parser)]
#[command(name = "levelagg", version)]
struct Args {
    /// estimate | simulate | clt | volume
    #[arg(value_enum)]
    command: Command,
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config's preset.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Worker threads (0 = one per core). Never changes results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let manifest = RunManifest {
        command: args.command,
        config_path: args.config,
        seed: args.seed,
        out_dir: args.out,
        preset: args.preset,
        threads: args.threads,
    };
    match run(&manifest) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
