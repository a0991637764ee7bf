//! Dataset records, CIFAR ingestion, normalization, augmentation and batching.

mod augment;
mod batch;
pub mod cifar;
mod synthetic;

pub use augment::{augment, augment_with, AugmentConfig, CropFlip};
pub use batch::{batch_iterator, Batch, BatchIterator};
pub use cifar::{load_cifar, CifarData, CifarVariant};
pub use synthetic::synthetic_dataset;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemError};

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const PIXELS: usize = CHANNELS * SIDE * SIDE;

/// One labelled image in `(C,H,W)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// `3·32·32` values; in `[0,1]` until normalized.
    pub image: Vec<f32>,
    pub label: usize,
    /// CIFAR-100 superclass.
    pub coarse_label: Option<usize>,
}

impl DatasetRecord {
    pub fn new(image: Vec<f32>, label: usize) -> Result<Self> {
        if image.len() != PIXELS {
            return Err(SemError::domain(format!(
                "image holds {} values, expected {PIXELS}",
                image.len()
            )));
        }
        Ok(Self {
            image,
            label,
            coarse_label: None,
        })
    }
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats {
        mean: [0.0; CHANNELS],
        std: [1.0; CHANNELS],
    };

    /// Population statistics over every pixel of every record.
    pub fn compute(records: &[DatasetRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(SemError::domain(
                "cannot compute statistics of an empty split",
            ));
        }
        let plane = SIDE * SIDE;
        let n = (records.len() * plane) as f64;
        let mut mean = [0.0; CHANNELS];
        for r in records {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += r.image[c * plane..][..plane]
                    .iter()
                    .map(|&v| f64::from(v))
                    .sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; CHANNELS];
        for r in records {
            for (c, v) in var.iter_mut().enumerate() {
                *v += r.image[c * plane..][..plane]
                    .iter()
                    .map(|&p| (f64::from(p) - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        Ok(Self {
            mean,
            std: var.map(|v| (v / n).sqrt()),
        })
    }
}

/// `(pixel − mean_c) / std_c` for each channel.
pub fn normalize(record: &DatasetRecord, stats: &ChannelStats) -> Result<DatasetRecord> {
    if let Some(c) = stats.std.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(SemError::domain(format!(
            "channel {c} has non-positive std {}",
            stats.std[c]
        )));
    }
    let plane = SIDE * SIDE;
    let image = record
        .image
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            ((f64::from(v) - stats.mean[c]) / stats.std[c]) as f32
        })
        .collect();
    Ok(DatasetRecord {
        image,
        ..record.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f32) -> DatasetRecord {
        DatasetRecord::new(vec![v; PIXELS], 0).unwrap()
    }

    #[test]
    fn identity_stats_leave_record_unchanged() {
        let r = synthetic_dataset(1, 1, 3).unwrap().remove(0);
        assert_eq!(normalize(&r, &ChannelStats::IDENTITY).unwrap(), r);
    }

    #[test]
    fn image_equal_to_mean_becomes_zero() {
        let stats = ChannelStats {
            mean: [0.25; 3],
            std: [0.5; 3],
        };
        let out = normalize(&constant(0.25), &stats).unwrap();
        assert!(out.image.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_std_is_rejected() {
        let stats = ChannelStats {
            mean: [0.0; 3],
            std: [1.0, 0.0, 1.0],
        };
        assert!(matches!(
            normalize(&constant(0.1), &stats),
            Err(SemError::Domain(_))
        ));
        assert!(ChannelStats::compute(&[]).is_err());
    }

    #[test]
    fn normalized_split_has_unit_statistics() {
        let records = synthetic_dataset(200, 10, 5).unwrap();
        let stats = ChannelStats::compute(&records).unwrap();
        let normed: Vec<_> = records
            .iter()
            .map(|r| normalize(r, &stats).unwrap())
            .collect();
        let again = ChannelStats::compute(&normed).unwrap();
        for c in 0..CHANNELS {
            assert!(again.mean[c].abs() < 1e-3, "mean {}", again.mean[c]);
            assert!((again.std[c] - 1.0).abs() < 1e-3, "std {}", again.std[c]);
        }
    }
}
