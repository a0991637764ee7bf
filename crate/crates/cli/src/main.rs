use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use sem_core::gradcheck::DEFAULT_TOLERANCE;
use sem_core::train::{
    ablation_csv, cmd_ablate, cmd_eval, cmd_export_decisions, cmd_gradcheck, cmd_random_ops,
    cmd_train, load_splits, Ablation,
};
use sem_core::{DatasetRecord, RunConfig, SemError};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "sem",
    version,
    about = "Switchable excitation attention experiments"
)]
struct Cli {
    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write metrics and checkpoints to output_dir.
    Train,
    /// Top-1 accuracy of a checkpoint on a split of the configured dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// An operation name, sem-layer or full-block; `list` prints them all.
        #[arg(long)]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Train with randomly assigned operators per block.
    RandomOps {
        #[arg(long, default_value_t = 1)]
        arity: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Run one of the ablation grids.
    Ablate {
        #[arg(long)]
        which: String,
    },
    /// Per-layer decision-weight summary of a checkpoint as CSV.
    ExportDecisions {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of test-split samples to run.
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Split {
    Train,
    Test,
}

fn exit_code(err: &SemError) -> u8 {
    match err {
        SemError::Usage(_) | SemError::Domain(_) => EXIT_USAGE,
        SemError::Ingestion { .. } | SemError::Integrity(_) | SemError::Io(_) => EXIT_DATA,
        SemError::NonFinite { .. } => EXIT_NUMERICAL,
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, SemError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for item in &cli.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| SemError::usage(format!("--set expects KEY=VALUE, got '{item}'")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split_records(cfg: &RunConfig, split: Split) -> Result<Vec<DatasetRecord>, SemError> {
    let splits = load_splits(cfg)?;
    Ok(match split {
        Split::Train => splits.train,
        Split::Test => splits.test,
    })
}

fn write_or_print(output: Option<&Path>, text: &str) -> Result<(), SemError> {
    match output {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8, SemError> {
    match &cli.command {
        Command::Train => {
            let cfg = resolve_config(cli)?;
            let outcome = cmd_train(&cfg)?;
            match outcome.last() {
                Some(r) => println!(
                    "epoch {} train_loss {:.4} train_top1 {:.2} test_top1 {:.2}",
                    r.epoch, r.train_loss, r.train_top1, r.test_top1
                ),
                None => println!("no training epochs"),
            }
            println!("checkpoint {}", outcome.checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            split,
            batch_size,
        } => {
            let cfg = resolve_config(cli)?;
            let records = split_records(&cfg, *split)?;
            let report = cmd_eval(
                checkpoint,
                &records,
                batch_size.unwrap_or(cfg.eval_batch_size),
            )?;
            println!(
                "top1 {:.4} loss {:.6} ({} / {})",
                report.top1(),
                report.loss,
                report.correct,
                report.total
            );
        }
        Command::Gradcheck {
            scope,
            seed,
            tolerance,
        } => {
            if scope == "list" {
                for s in sem_core::train::all_scopes() {
                    println!("{s}");
                }
                return Ok(0);
            }
            let report = cmd_gradcheck(scope, *seed)?;
            for g in &report.groups {
                let status = if g.max_rel_err <= *tolerance {
                    "ok"
                } else {
                    "FAIL"
                };
                println!(
                    "{:<24} {:>6} {:.3e} {status}",
                    g.name, g.numel, g.max_rel_err
                );
            }
            if !report.passed(*tolerance) {
                eprintln!(
                    "gradient check failed for {scope}: {:.3e} > {tolerance:e}",
                    report.max_rel_err()
                );
                return Ok(EXIT_NUMERICAL);
            }
        }
        Command::RandomOps { arity, trials } => {
            let cfg = resolve_config(cli)?;
            let report = cmd_random_ops(&cfg, *arity, *trials)?;
            print!("{}", report.to_csv());
            println!(
                "mean {:.4} min {:.4} max {:.4}",
                report.mean, report.min, report.max
            );
        }
        Command::Ablate { which } => {
            let which: Ablation = which.parse()?;
            let cfg = resolve_config(cli)?;
            let rows = cmd_ablate(which, &cfg)?;
            print!("{}", ablation_csv(&rows));
        }
        Command::ExportDecisions {
            checkpoint,
            samples,
            output,
        } => {
            let cfg = resolve_config(cli)?;
            let mut records = split_records(&cfg, Split::Test)?;
            records.truncate(*samples);
            let csv = cmd_export_decisions(checkpoint, &records, cfg.eval_batch_size)?;
            write_or_print(output.as_deref(), &csv)?;
            if let Some(path) = output {
                info!("wrote {}", path.display());
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
