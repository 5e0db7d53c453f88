use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use difa::adapt::Evaluator;
use difa::analysis::GeneratorCensusConfig;
use difa::cli::{self, RunOptions, TrainConfig, Variant};

#[derive(Parser)]
#[command(
    name = "difa",
    version,
    about = "Adversarial feature augmentation for domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Picks a run directory, either directly or from the config that produced it.
#[derive(Args)]
struct Locate {
    /// Run directory written by `train`.
    #[arg(long, conflicts_with = "config")]
    run: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run Step 0, Step 1 (difa only) and the variant's adversarial game.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// Reuse finished steps found in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Re-measure source and target accuracy from saved checkpoints.
    Eval {
        #[command(flatten)]
        locate: Locate,
    },
    /// Count activation patterns of source and generated features.
    Aps {
        #[command(flatten)]
        locate: Locate,
        #[arg(long, default_value_t = GeneratorCensusConfig::default().patience)]
        patience: usize,
        #[arg(long, default_value_t = GeneratorCensusConfig::default().max_samples)]
        max_samples: usize,
        #[arg(long, default_value_t = GeneratorCensusConfig::default().batch)]
        batch: usize,
    },
    /// Write source and generated features as FAD1 and CSV.
    ExportFeatures {
        #[command(flatten)]
        locate: Locate,
        /// Destination `.fad` file; the CSV goes next to it.
        #[arg(long = "to")]
        to: PathBuf,
    },
    /// Compare completed runs under one output directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn eval_threads() -> Result<Option<usize>, difa::Error> {
    match std::env::var("FAV_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(difa::Error::Validation(format!(
                "FAV_THREADS must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn load_config(o: &Overrides) -> Result<TrainConfig> {
    let path = o
        .config
        .as_deref()
        .ok_or_else(|| difa::Error::Validation("--config is required".into()))?;
    let mut cfg = cli::parse_config(path)?;
    if let Some(v) = o.variant {
        cfg.variant = v;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(out) = &o.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_path(l: &Locate) -> Result<PathBuf> {
    match &l.run {
        Some(dir) => Ok(dir.clone()),
        None => Ok(cli::run_dir(&load_config(&l.overrides)?)),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn evaluator() -> Result<Evaluator> {
    Ok(Evaluator::new(eval_threads()?)?)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train { overrides, resume } => {
            let cfg = load_config(&overrides)?;
            let opts = RunOptions {
                resume,
                eval_threads: eval_threads()?,
            };
            let summary = cli::run(&cfg, &opts)?;
            eprintln!("wrote {}", cli::run_dir(&cfg).display());
            print_json(&summary)
        }
        Command::Eval { locate } => print_json(&cli::eval_run(&run_path(&locate)?, &evaluator()?)?),
        Command::Aps {
            locate,
            patience,
            max_samples,
            batch,
        } => {
            let census = GeneratorCensusConfig {
                batch,
                patience,
                max_samples,
            };
            print_json(&cli::aps_run(&run_path(&locate)?, &evaluator()?, &census)?)
        }
        Command::ExportFeatures { locate, to } => {
            let (fad, csv) = cli::export_run(&run_path(&locate)?, &to, &evaluator()?)?;
            println!("{}\n{}", fad.display(), csv.display());
            Ok(())
        }
        Command::Report { dir } => {
            let summaries = cli::collect_summaries(&dir)
                .with_context(|| format!("reading runs under {}", dir.display()))?;
            let rows = cli::report_rows(&summaries)?;
            print!("{}", cli::render_report(&summaries[0].protocol, &rows));
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<difa::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
