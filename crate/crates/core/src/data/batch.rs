use rand::seq::SliceRandom;

use super::{
    augment, normalize, AugmentConfig, ChannelStats, DatasetRecord, CHANNELS, PIXELS, SIDE,
};
use crate::error::{Result, SemError};
use crate::rng::RngState;
use crate::tensor::{Element, Tensor};

const SHUFFLE_STREAM: u64 = 0x5_4FF1E;
const AUGMENT_STREAM: u64 = 0xA_0617;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// `(B,3,32,32)`.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    /// Positions of the samples in the source slice.
    pub indices: Vec<usize>,
}

/// Mini-batches over a split. The last partial batch is kept.
#[derive(Debug, Clone)]
pub struct BatchIterator<'a> {
    records: &'a [DatasetRecord],
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    batch_index: u64,
    augment: Option<(AugmentConfig, RngState)>,
    stats: Option<ChannelStats>,
}

/// Batches in a shuffled order keyed by `(seed, epoch)`, or in file order when
/// `shuffle_seed` is `None`.
pub fn batch_iterator(
    records: &[DatasetRecord],
    batch_size: usize,
    shuffle_seed: Option<u64>,
    epoch: u64,
) -> Result<BatchIterator<'_>> {
    if batch_size == 0 {
        return Err(SemError::usage("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = RngState::new(seed, SHUFFLE_STREAM).derive(epoch).rng();
        order.shuffle(&mut rng);
    }
    Ok(BatchIterator {
        records,
        order,
        batch_size,
        cursor: 0,
        batch_index: 0,
        augment: None,
        stats: None,
    })
}

impl<'a> BatchIterator<'a> {
    /// Augment each sample with draws from a stream keyed by `(seed, epoch, batch)`.
    pub fn with_augment(mut self, cfg: AugmentConfig, seed: u64, epoch: u64) -> Self {
        if cfg.enabled {
            self.augment = Some((cfg, RngState::new(seed, AUGMENT_STREAM).derive(epoch)));
        }
        self
    }

    pub fn with_normalization(mut self, stats: ChannelStats) -> Result<Self> {
        // validates the std values once up front
        normalize(&DatasetRecord::new(vec![0.0; PIXELS], 0)?, &stats)?;
        self.stats = Some(stats);
        Ok(self)
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn next_batch<T: Element>(&mut self) -> Option<Result<Batch<T>>> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let mut rng = self
            .augment
            .map(|(cfg, state)| (cfg, state.derive(self.batch_index).rng()));
        self.batch_index += 1;
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in &indices {
            let mut rec = match rng.as_mut() {
                Some((cfg, r)) => augment(&self.records[i], cfg, r),
                None => self.records[i].clone(),
            };
            if let Some(stats) = &self.stats {
                rec = match normalize(&rec, stats) {
                    Ok(r) => r,
                    Err(e) => return Some(Err(e)),
                };
            }
            data.extend(rec.image.iter().map(|&v| T::from_f64(f64::from(v))));
            labels.push(rec.label);
        }
        Some(
            Tensor::new([indices.len(), CHANNELS, SIDE, SIDE], data).map(|images| Batch {
                images,
                labels,
                indices,
            }),
        )
    }
}
