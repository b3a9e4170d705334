use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coopal_cli::{parse_config, run_grid, CliError, CliResult};
use coopal_core::dataset::synthesize;

#[derive(Parser)]
#[command(
    name = "coopal",
    version,
    about = "Cooperative active learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured grid and write CSV results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic Gaussian-cluster dataset as CSV.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        features: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Within-class standard deviation.
        #[arg(long, default_value_t = 2.0)]
        spread: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Run {
            config,
            out,
            seed_override,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(seed) = seed_override {
                cfg.seeds = vec![seed];
            }
            let out = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            for path in run_grid(&cfg, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            let grid = cfg.grid();
            println!(
                "ok: {} cell(s) x {} seed(s)",
                grid.cells().len(),
                cfg.seeds.len()
            );
            Ok(())
        }
        Command::Synth {
            classes,
            features,
            per_class,
            seed,
            spread,
            out,
        } => {
            let ds = synthesize(classes, features, per_class, spread, seed)?;
            let file = File::create(&out).map_err(|e| CliError::Io {
                path: out.clone(),
                source: e,
            })?;
            ds.write_csv(BufWriter::new(file))?;
            Ok(())
        }
    }
}
