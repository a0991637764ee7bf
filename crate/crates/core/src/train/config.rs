use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::{DecisionMode, OperatorSet, DEFAULT_REDUCTION};
use crate::backbone::{AttentionMode, NetworkConfig};
use crate::error::{Result, SemError};
use crate::kernels::Activation;
use crate::optim::{SgdConfig, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    Synthetic,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = SemError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar100" => Ok(DatasetKind::Cifar100),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(SemError::usage(format!("unknown dataset '{other}'"))),
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Dataset root for CIFAR. Falls back to `SEM_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
    pub depth: usize,
    pub attention: AttentionMode,
    pub operators: OperatorSet,
    pub reduction: usize,
    pub switch_activation: Activation,
    pub decision: DecisionMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Use only the first N training records.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub synthetic_classes: usize,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sched = StepSchedule::default();
        let sgd = SgdConfig::default();
        Self {
            dataset: DatasetKind::Cifar10,
            data_dir: None,
            depth: 20,
            attention: AttentionMode::Sem,
            operators: OperatorSet::full(),
            reduction: DEFAULT_REDUCTION,
            switch_activation: Activation::Sigmoid,
            decision: DecisionMode::Learned,
            epochs: 164,
            batch_size: 128,
            eval_batch_size: 256,
            lr: sched.initial,
            milestones: sched.milestones,
            lr_gamma: sched.gamma,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            augment: true,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            train_subset: None,
            test_subset: None,
            synthetic_train: 512,
            synthetic_test: 256,
            synthetic_classes: 10,
            max_steps: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| SemError::usage(format!("invalid value '{value}' for '{key}'")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(SemError::usage(format!(
            "invalid boolean '{value}' for '{key}'"
        ))),
    }
}

fn show_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, ToString::to_string)
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "data_dir",
        "depth",
        "attention",
        "operators",
        "reduction",
        "switch_activation",
        "decision",
        "epochs",
        "batch_size",
        "eval_batch_size",
        "lr",
        "milestones",
        "lr_gamma",
        "momentum",
        "weight_decay",
        "augment",
        "seed",
        "output_dir",
        "train_subset",
        "test_subset",
        "synthetic_train",
        "synthetic_test",
        "synthetic_classes",
        "max_steps",
    ];

    /// Small synthetic run, handy for tests and smoke checks.
    pub fn synthetic(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            epochs: 2,
            batch_size: 32,
            milestones: vec![],
            synthetic_train: 64,
            synthetic_test: 32,
            output_dir: output_dir.into(),
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "dataset" => self.dataset = parse(key, value)?,
            "data_dir" => self.data_dir = parse_opt(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "attention" => self.attention = parse(key, value)?,
            "operators" => self.operators = parse(key, value)?,
            "reduction" => self.reduction = parse(key, value)?,
            "switch_activation" => self.switch_activation = parse(key, value)?,
            "decision" => {
                self.decision = match value.trim().to_ascii_lowercase().as_str() {
                    "learned" => DecisionMode::Learned,
                    "fixed" => DecisionMode::Fixed,
                    _ => return Err(SemError::usage(format!("invalid decision mode '{value}'"))),
                }
            }
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "eval_batch_size" => self.eval_batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "milestones" => {
                self.milestones = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "lr_gamma" => self.lr_gamma = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            "train_subset" => self.train_subset = parse_opt(key, value)?,
            "test_subset" => self.test_subset = parse_opt(key, value)?,
            "synthetic_train" => self.synthetic_train = parse(key, value)?,
            "synthetic_test" => self.synthetic_test = parse(key, value)?,
            "synthetic_classes" => self.synthetic_classes = parse(key, value)?,
            "max_steps" => self.max_steps = parse_opt(key, value)?,
            other => return Err(SemError::usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dataset" => self.dataset.to_string(),
            "data_dir" => show_opt(&self.data_dir.as_ref().map(|p| p.display())),
            "depth" => self.depth.to_string(),
            "attention" => self.attention.to_string(),
            "operators" => self.operators.to_string(),
            "reduction" => self.reduction.to_string(),
            "switch_activation" => self.switch_activation.to_string(),
            "decision" => match self.decision {
                DecisionMode::Learned => "learned".into(),
                DecisionMode::Fixed => "fixed".into(),
            },
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "eval_batch_size" => self.eval_batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "milestones" => self
                .milestones
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "lr_gamma" => self.lr_gamma.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "augment" => self.augment.to_string(),
            "seed" => self.seed.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "train_subset" => show_opt(&self.train_subset),
            "test_subset" => show_opt(&self.test_subset),
            "synthetic_train" => self.synthetic_train.to_string(),
            "synthetic_test" => self.synthetic_test.to_string(),
            "synthetic_classes" => self.synthetic_classes.to_string(),
            "max_steps" => show_opt(&self.max_steps),
            _ => return None,
        })
    }

    /// Apply `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SemError::usage(format!("line {}: expected key=value, got '{line}'", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SemError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Every field as `key=value`, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Cifar10 => 10,
            DatasetKind::Cifar100 => 100,
            DatasetKind::Synthetic => self.synthetic_classes,
        }
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            depth: self.depth,
            num_classes: self.num_classes(),
            attention: self.attention,
            operator_set: self.operators.clone(),
            reduction: self.reduction,
            switch_activation: self.switch_activation,
            decision: self.decision,
            ..NetworkConfig::default()
        }
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule::new(self.lr, self.milestones.clone(), self.lr_gamma)
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network()
            .validate()
            .map_err(|e| SemError::usage(e.to_string()))?;
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(SemError::usage("batch sizes must be positive"));
        }
        if self.epochs > 0 {
            if let Some(m) = self.milestones.iter().find(|&&m| m >= self.epochs) {
                return Err(SemError::usage(format!(
                    "milestone {m} is not below epochs={}; set milestones explicitly",
                    self.epochs
                )));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SemError::usage(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.dataset == DatasetKind::Synthetic
            && (self.synthetic_classes == 0 || self.synthetic_train < self.synthetic_classes)
        {
            return Err(SemError::usage(
                "synthetic_train must be at least synthetic_classes",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.epochs, 164);
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.milestones, [81, 122]);
        assert_eq!((c.momentum, c.weight_decay, c.lr), (0.9, 1e-4, 0.1));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::synthetic("out");
        c.apply_text("attention = random_double:7\n# comment\noperators=cnn+ie\ntrain_subset=100\nmilestones=\n")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.attention, AttentionMode::RandomDouble(7));
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("colour", "red"), Err(SemError::Usage(_))));
        assert!(c.set("augment", "maybe").is_err());
        assert!(c.apply_text("no equals sign").is_err());
        c.set("epochs", "10").unwrap();
        assert!(matches!(c.validate(), Err(SemError::Usage(_))));
        c.set("depth", "21").unwrap();
        c.set("milestones", "5").unwrap();
        assert!(c.validate().is_err());
    }
}
