use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::export::DecisionSummary;
use crate::error::{Result, SemError};

/// One line of `metrics.jsonl`, written after every epoch.
///
/// Wall-clock time lives in `timing.jsonl` so that this log is a pure
/// function of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    /// Optimizer steps taken so far.
    pub steps: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    pub test_loss: f64,
    pub test_top1: f64,
    /// Test-set decision summary per attention layer with a decision network.
    pub decisions: Vec<DecisionSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub epoch: usize,
    pub wall_clock_seconds: f64,
}

/// Append-only JSON-lines file.
#[derive(Debug)]
pub struct JsonlWriter {
    file: File,
}

impl JsonlWriter {
    /// Create (or truncate) the file.
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            file: File::create(path)?,
        })
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        Ok(Self {
            file: OpenOptions::new().create(true).append(true).open(path)?,
        })
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| SemError::domain(format!("serialize: {e}")))?;
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| {
            serde_json::from_str(&line?)
                .map_err(|e| SemError::domain(format!("bad metrics line: {e}")))
        })
        .collect()
}
