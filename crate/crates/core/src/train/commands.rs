use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::attention::export::to_csv;
use crate::attention::{DecisionMode, OperatorSet};
use crate::backbone::{build_network, AttentionMode, Model};
use crate::checkpoint::{load_model, save_model, CheckpointMeta};
use crate::data::{batch_iterator, ChannelStats, DatasetRecord};
use crate::error::{Result, SemError};
use crate::kernels::Activation;
use crate::rng::RngState;

use super::config::RunConfig;
use super::metrics::{JsonlWriter, MetricsRecord, TimingRecord};
use super::trainer::{augment_config, evaluate, load_splits, EvalReport, Splits, Trainer};

const MODEL_STREAM: u64 = 0x30DE1;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const INITIAL_CHECKPOINT: &str = "initial.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    /// Final weights, or the initial ones when `epochs = 0`.
    pub checkpoint: PathBuf,
    pub model: Model<f32>,
    pub stats: ChannelStats,
}

impl TrainOutcome {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }
}

pub fn initial_model(cfg: &RunConfig) -> Result<Model<f32>> {
    build_network(&cfg.network(), RngState::new(cfg.seed, MODEL_STREAM))
}

/// Train as configured, loading the dataset first.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    train_on(cfg, &splits)
}

/// Train on already-loaded data. Writes the resolved config, metrics log and
/// checkpoints into `cfg.output_dir`.
pub fn train_on(cfg: &RunConfig, splits: &Splits) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    let meta = |epoch: usize| CheckpointMeta {
        network: cfg.network(),
        normalization: Some(splits.stats),
        epoch: epoch as u64,
    };
    let mut trainer = Trainer::new(initial_model(cfg)?, cfg.sgd());
    let mut metrics = JsonlWriter::create(&out.join(METRICS_FILE))?;
    if cfg.epochs == 0 {
        let path = out.join(INITIAL_CHECKPOINT);
        save_model(&path, &trainer.model, &meta(0))?;
        return Ok(TrainOutcome {
            records: vec![],
            checkpoint: path,
            model: trainer.model,
            stats: splits.stats,
        });
    }
    let mut timing = JsonlWriter::create(&out.join(TIMING_FILE))?;
    let schedule = cfg.schedule();
    let augment = augment_config(cfg);
    let start = Instant::now();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best = f64::NEG_INFINITY;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut iter = batch_iterator(&splits.train, cfg.batch_size, Some(cfg.seed), epoch as u64)?
            .with_augment(augment, cfg.seed, epoch as u64)
            .with_normalization(splits.stats)?;
        let (mut loss_sum, mut correct, mut count) = (0.0, 0, 0);
        let mut capped = false;
        while let Some(batch) = iter.next_batch::<f32>() {
            if cfg.max_steps.is_some_and(|m| trainer.steps >= m) {
                capped = true;
                break;
            }
            let s = trainer.train_step(&batch?, lr)?;
            loss_sum += s.loss * s.count as f64;
            correct += s.correct;
            count += s.count;
        }
        let eval = trainer.evaluate(&splits.test, cfg.eval_batch_size, &splits.stats)?;
        let record = MetricsRecord {
            epoch: epoch + 1,
            lr,
            steps: trainer.steps,
            train_loss: if count > 0 {
                loss_sum / count as f64
            } else {
                0.0
            },
            train_top1: if count > 0 {
                100.0 * correct as f64 / count as f64
            } else {
                0.0
            },
            test_loss: eval.loss,
            test_top1: eval.top1(),
            decisions: eval.decisions,
        };
        metrics.write(&record)?;
        timing.write(&TimingRecord {
            epoch: epoch + 1,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        })?;
        info!(
            "epoch {} lr {} train_loss {:.4} train_top1 {:.2} test_top1 {:.2}",
            record.epoch, lr, record.train_loss, record.train_top1, record.test_top1
        );
        if record.test_top1 > best {
            best = record.test_top1;
            save_model(&out.join(BEST_CHECKPOINT), &trainer.model, &meta(epoch + 1))?;
        }
        records.push(record);
        if capped || cfg.max_steps.is_some_and(|m| trainer.steps >= m) {
            break;
        }
    }
    let path = out.join(FINAL_CHECKPOINT);
    save_model(&path, &trainer.model, &meta(records.len()))?;
    Ok(TrainOutcome {
        records,
        checkpoint: path,
        model: trainer.model,
        stats: splits.stats,
    })
}

/// Top-1 of a saved model on `records`, using the normalization stored with it.
pub fn cmd_eval(
    checkpoint: &Path,
    records: &[DatasetRecord],
    batch_size: usize,
) -> Result<EvalReport> {
    let (mut model, meta) = load_model::<f32>(checkpoint)?;
    let stats = meta.normalization.unwrap_or(ChannelStats::IDENTITY);
    evaluate(&mut model, records, batch_size, &stats)
}

/// Per-layer decision summary CSV of a SEM checkpoint over `records`.
pub fn cmd_export_decisions(
    checkpoint: &Path,
    records: &[DatasetRecord],
    batch_size: usize,
) -> Result<String> {
    let (mut model, meta) = load_model::<f32>(checkpoint)?;
    if !model.has_decisions() {
        return Err(SemError::usage(format!(
            "checkpoint uses attention '{}' without decision networks",
            model.config.attention
        )));
    }
    let stats = meta.normalization.unwrap_or(ChannelStats::IDENTITY);
    Ok(to_csv(
        &evaluate(&mut model, records, batch_size, &stats)?.decisions,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub assignment_seed: u64,
    /// Operator set of each block, e.g. `fc+ie`.
    pub assignment: Vec<String>,
    pub test_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomOpsReport {
    pub arity: usize,
    pub trials: Vec<TrialResult>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RandomOpsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,assignment_seed,test_top1,assignment\n");
        for t in &self.trials {
            writeln!(
                out,
                "{},{},{:.4},{}",
                t.trial,
                t.assignment_seed,
                t.test_top1,
                t.assignment.join(" ")
            )
            .expect("string write");
        }
        out
    }
}

pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    RngState::new(base_seed, 0x7_41A1)
        .derive(trial as u64)
        .stream
}

/// `trials` trainings, each with a freshly drawn per-block operator assignment.
pub fn cmd_random_ops(base: &RunConfig, arity: usize, trials: usize) -> Result<RandomOpsReport> {
    if trials == 0 {
        return Err(SemError::usage("trials must be at least 1"));
    }
    if !matches!(arity, 1 | 2) {
        return Err(SemError::usage(format!(
            "arity must be 1 or 2, got {arity}"
        )));
    }
    base.validate()?;
    let splits = load_splits(base)?;
    let mut results = Vec::with_capacity(trials);
    for trial in 0..trials {
        let seed = trial_seed(base.seed, trial);
        let mut cfg = base.clone();
        cfg.attention = if arity == 1 {
            AttentionMode::RandomSingle(seed)
        } else {
            AttentionMode::RandomDouble(seed)
        };
        cfg.output_dir = base.output_dir.join(format!("trial_{trial}"));
        let outcome = train_on(&cfg, &splits)?;
        let assignment: Vec<String> = outcome
            .model
            .assignment
            .as_ref()
            .map(|a| a.blocks.iter().map(ToString::to_string).collect())
            .unwrap_or_default();
        fs::write(
            cfg.output_dir.join("assignment.txt"),
            assignment.join("\n") + "\n",
        )?;
        results.push(TrialResult {
            trial,
            assignment_seed: seed,
            assignment,
            test_top1: outcome.last().map_or(0.0, |r| r.test_top1),
        });
    }
    let accs: Vec<f64> = results.iter().map(|t| t.test_top1).collect();
    let report = RandomOpsReport {
        arity,
        mean: accs.iter().sum::<f64>() / accs.len() as f64,
        min: accs.iter().copied().fold(f64::INFINITY, f64::min),
        max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        trials: results,
    };
    fs::create_dir_all(&base.output_dir)?;
    fs::write(base.output_dir.join("random_ops.csv"), report.to_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    SizeOfEo,
    DecisionRemoval,
    Activation,
    NoAugment,
}

impl FromStr for Ablation {
    type Err = SemError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "size_of_eo" => Ok(Ablation::SizeOfEo),
            "decision_removal" => Ok(Ablation::DecisionRemoval),
            "activation" => Ok(Ablation::Activation),
            "no_augment" => Ok(Ablation::NoAugment),
            other => Err(SemError::usage(format!("unknown ablation '{other}'"))),
        }
    }
}

impl Ablation {
    /// Named variants of `base`, all sharing its seed.
    pub fn variants(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            c.attention = AttentionMode::Sem;
            f(&mut c);
            c
        };
        match self {
            Ablation::SizeOfEo => OperatorSet::all_subsets()
                .into_iter()
                .map(|ops| (ops.to_string(), with(&|c| c.operators = ops.clone())))
                .collect(),
            Ablation::DecisionRemoval => vec![
                (
                    "with_decision".into(),
                    with(&|c| c.decision = DecisionMode::Learned),
                ),
                (
                    "w_equals_1".into(),
                    with(&|c| c.decision = DecisionMode::Fixed),
                ),
            ],
            Ablation::Activation => ["tanh", "relu", "leaky_relu", "sigmoid"]
                .into_iter()
                .map(|a| {
                    let act: Activation = a.parse().expect("known activation");
                    (a.to_string(), with(&|c| c.switch_activation = act))
                })
                .collect(),
            Ablation::NoAugment => vec![
                ("augment".into(), with(&|c| c.augment = true)),
                ("no_augment".into(), with(&|c| c.augment = false)),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    /// Last epoch's metrics; `None` when the run aborted.
    pub metrics: Option<MetricsRecord>,
    /// Why the run aborted.
    pub failure: Option<String>,
}

pub const ABLATION_HEADER: &str =
    "variant,params,epochs,steps,train_loss,train_top1,test_loss,test_top1,status";

/// One row per variant, comparable side by side.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        match &r.metrics {
            Some(m) => writeln!(
                out,
                "{},{},{},{},{:.6},{:.4},{:.6},{:.4},ok",
                r.variant,
                r.params,
                m.epoch,
                m.steps,
                m.train_loss,
                m.train_top1,
                m.test_loss,
                m.test_top1
            ),
            None => writeln!(
                out,
                "{},{},,,,,,,\"{}\"",
                r.variant,
                r.params,
                r.failure.as_deref().unwrap_or("failed").replace('"', "'")
            ),
        }
        .expect("string write");
    }
    out
}

/// Run every variant of `which`. A variant that hits a non-finite value is
/// reported as a failed row; other errors abort the grid.
pub fn cmd_ablate(which: Ablation, base: &RunConfig) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let splits = load_splits(base)?;
    let mut rows = Vec::new();
    for (name, mut cfg) in which.variants(base) {
        cfg.output_dir = base.output_dir.join(&name);
        let params = initial_model(&cfg)?.num_params();
        let row = match train_on(&cfg, &splits) {
            Ok(o) => AblationRow {
                variant: name,
                params,
                metrics: o.records.last().cloned(),
                failure: None,
            },
            Err(e @ SemError::NonFinite { .. }) => AblationRow {
                variant: name,
                params,
                metrics: None,
                failure: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    fs::create_dir_all(&base.output_dir)?;
    fs::write(base.output_dir.join("ablation.csv"), ablation_csv(&rows))?;
    Ok(rows)
}
