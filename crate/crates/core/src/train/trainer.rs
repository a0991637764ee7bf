use std::path::PathBuf;

use crate::attention::export::DecisionSummary;
use crate::attention::DecisionVector;
use crate::autodiff::{Graph, Var};
use crate::backbone::{BlockAttention, ForwardOptions, Model};
use crate::data::{
    batch_iterator, cifar::CifarVariant, load_cifar, synthetic_dataset, AugmentConfig, Batch,
    ChannelStats, DatasetRecord,
};
use crate::error::{Result, SemError};
use crate::optim::{Sgd, SgdConfig};
use crate::tensor::{Element, Tensor};

use super::config::{DatasetKind, RunConfig};

pub const DATA_DIR_ENV: &str = "SEM_DATA_DIR";
const SYNTHETIC_TEST_SALT: u64 = 0x7E57;

/// Train and test records plus the normalization computed from the train split.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
    pub stats: ChannelStats,
}

pub fn data_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| SemError::Ingestion {
            path: PathBuf::new(),
            offset: 0,
            message: format!("no dataset directory: set data_dir or {DATA_DIR_ENV}"),
        })
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let (mut train, mut test) = match cfg.dataset {
        DatasetKind::Synthetic => (
            synthetic_dataset(cfg.synthetic_train, cfg.synthetic_classes, cfg.seed)?,
            synthetic_dataset(
                cfg.synthetic_test,
                cfg.synthetic_classes,
                cfg.seed ^ SYNTHETIC_TEST_SALT,
            )?,
        ),
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
            let variant = CifarVariant::from_classes(cfg.num_classes())?;
            let data = load_cifar(&data_dir(cfg)?, variant)?;
            (data.train, data.test)
        }
    };
    if let Some(n) = cfg.train_subset {
        train.truncate(n);
    }
    if let Some(n) = cfg.test_subset {
        test.truncate(n);
    }
    let stats = ChannelStats::compute(&train)?;
    Ok(Splits { train, test, stats })
}

/// Index of the largest logit in each row; ties go to the lowest index.
pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<usize>,
    /// Per-layer summaries, for layers that run a decision network.
    pub decisions: Vec<DecisionSummary>,
}

impl EvalReport {
    pub fn top1(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

fn first_non_finite<T: Element>(g: &Graph<T>, named: &[(String, Var)]) -> Option<String> {
    named
        .iter()
        .find(|(_, v)| !g.value(*v).is_finite())
        .map(|(n, _)| n.clone())
}

/// A model plus its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    sgd: Sgd<f32>,
    pub steps: usize,
}

impl Trainer {
    pub fn new(model: Model<f32>, sgd: SgdConfig) -> Self {
        Self {
            model,
            sgd: Sgd::new(sgd),
            steps: 0,
        }
    }

    /// One SGD step on `batch`. Accuracy is measured on the forward pass
    /// that produced the gradient.
    pub fn train_step(&mut self, batch: &Batch<f32>, lr: f64) -> Result<StepStats> {
        let step = self.steps;
        let mut g = Graph::new();
        let x = g.constant(batch.images.clone());
        let out = self.model.forward(&mut g, x, ForwardOptions::train())?;
        let loss = g.softmax_cross_entropy(out.logits, &batch.labels)?;
        let loss_value = f64::from(g.value(loss).item()?);
        if !loss_value.is_finite() {
            let layer = first_non_finite(&g, &out.activations).unwrap_or_else(|| "loss".into());
            return Err(SemError::NonFinite {
                step,
                detail: format!(
                    "loss is {loss_value}; first non-finite activation in layer {layer}"
                ),
            });
        }
        let correct = argmax_rows(g.value(out.logits))
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
        g.backward(loss)?;
        let names: Vec<String> = self
            .model
            .store
            .entries()
            .iter()
            .map(|e| e.name.clone())
            .collect();
        let (mut params, grads) = self.model.store.trainable_with_grads(&g, &out.param_vars);
        if let Some(i) = grads
            .iter()
            .position(|gr| gr.is_some_and(|t| !t.is_finite()))
        {
            let name = names
                .iter()
                .zip(&out.param_vars)
                .filter(|(_, v)| v.is_some())
                .nth(i)
                .map(|(n, _)| n.clone())
                .unwrap_or_default();
            return Err(SemError::NonFinite {
                step,
                detail: format!("non-finite gradient for parameter {name}"),
            });
        }
        self.sgd.step(&mut params, &grads, lr)?;
        self.steps += 1;
        Ok(StepStats {
            loss: loss_value,
            correct,
            count: batch.labels.len(),
        })
    }

    pub fn evaluate(
        &mut self,
        records: &[DatasetRecord],
        batch_size: usize,
        stats: &ChannelStats,
    ) -> Result<EvalReport> {
        evaluate(&mut self.model, records, batch_size, stats)
    }
}

/// Accuracy and mean loss in inference mode. Results do not depend on `batch_size`.
pub fn evaluate(
    model: &mut Model<f32>,
    records: &[DatasetRecord],
    batch_size: usize,
    stats: &ChannelStats,
) -> Result<EvalReport> {
    let layers: Vec<_> = model.blocks().cloned().collect();
    let mut per_layer: Vec<Vec<DecisionVector>> = vec![Vec::new(); layers.len()];
    let mut iter = batch_iterator(records, batch_size, None, 0)?.with_normalization(*stats)?;
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(records.len());
    let mut correct = 0;
    while let Some(batch) = iter.next_batch::<f32>() {
        let batch = batch?;
        let mut g = Graph::new();
        let x = g.constant(batch.images);
        let out = model.forward(&mut g, x, ForwardOptions::eval())?;
        let loss = g.softmax_cross_entropy(out.logits, &batch.labels)?;
        loss_sum += f64::from(g.value(loss).item()?) * batch.labels.len() as f64;
        let pred = argmax_rows(g.value(out.logits));
        correct += pred
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
        predictions.extend(pred);
        for ((slot, w), info) in per_layer.iter_mut().zip(&out.decisions).zip(&layers) {
            if let (Some(w), BlockAttention::Sem(cfg)) = (w, &info.attention) {
                slot.push(DecisionVector::from_graph(&g, *w, &cfg.ops));
            }
        }
    }
    let decisions = layers
        .iter()
        .zip(&per_layer)
        .filter(|(_, d)| !d.is_empty())
        .map(|(info, d)| {
            DecisionSummary::from_decisions(info.index, info.stage, info.out_channels, d)
        })
        .collect();
    Ok(EvalReport {
        loss: if records.is_empty() {
            0.0
        } else {
            loss_sum / records.len() as f64
        },
        correct,
        total: records.len(),
        predictions,
        decisions,
    })
}

/// The augmentation a run uses.
pub fn augment_config(cfg: &RunConfig) -> AugmentConfig {
    if cfg.augment {
        AugmentConfig::default()
    } else {
        AugmentConfig::disabled()
    }
}
