//! Per-layer decision-weight summaries as CSV rows.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{DecisionVector, Operator};

pub const CSV_HEADER: &str =
    "layer_index,stage,channels,w_fc_mean,w_cnn_mean,w_ie_mean,w_fc_std,w_cnn_std,w_ie_std";

/// Mean and population standard deviation of each operator weight over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub layer_index: usize,
    pub stage: usize,
    pub channels: usize,
    /// Indexed FC, CNN, IE; `None` for operators the layer does not use.
    pub mean: [Option<f64>; 3],
    pub std: [Option<f64>; 3],
}

impl DecisionSummary {
    pub fn from_decisions(
        layer_index: usize,
        stage: usize,
        channels: usize,
        batches: &[DecisionVector],
    ) -> Self {
        let mut mean = [None; 3];
        let mut std = [None; 3];
        for (slot, op) in Operator::ALL.into_iter().enumerate() {
            let values: Vec<f64> = batches
                .iter()
                .filter_map(|d| d.component(op))
                .flatten()
                .collect();
            if values.is_empty() {
                continue;
            }
            let n = values.len() as f64;
            let mu = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            mean[slot] = Some(mu);
            std[slot] = Some(var.sqrt());
        }
        Self {
            layer_index,
            stage,
            channels,
            mean,
            std,
        }
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{}", self.layer_index, self.stage, self.channels);
        for v in self.mean.iter().chain(&self.std) {
            match v {
                Some(v) => write!(row, ",{v:.8}").expect("string write"),
                None => row.push(','),
            }
        }
        row
    }
}

/// Header plus one row per summary, newline-terminated.
pub fn to_csv(rows: &[DecisionSummary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
