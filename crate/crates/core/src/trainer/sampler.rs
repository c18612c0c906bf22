use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TrainConfig, TrainError};
use crate::data::{derive_seed, Split};

const UNLABELED_STREAM: u64 = 0x75;
const LABELED_STREAM: u64 = 0x6c;

/// Dataset row indices for one training step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub global_step: usize,
    pub unlabeled: Vec<usize>,
    pub labeled: Vec<usize>,
}

/// Deterministic batch order. The unlabeled set is reshuffled every epoch;
/// the labeled set is walked as an endless sequence of reshuffled cycles
/// that ignores epoch boundaries. Both orders are pure functions of the
/// seed and the step counters, so resuming needs no extra state.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    unlabeled: Vec<usize>,
    labeled: Vec<usize>,
    unlabeled_batch: usize,
    labeled_batch: usize,
    seed: u64,
}

impl BatchSampler {
    pub fn new(split: &Split, cfg: &TrainConfig) -> Result<Self, TrainError> {
        if cfg.labeled_batch > 0 && split.labeled.is_empty() {
            return Err(TrainError::Config("labeled_batch > 0 but the split has no labeled samples".into()));
        }
        if cfg.unlabeled_batch > 0 && split.unlabeled.is_empty() {
            return Err(TrainError::Config("unlabeled_batch > 0 but the split has no unlabeled samples".into()));
        }
        if cfg.unlabeled_batch == 0 && cfg.labeled_batch == 0 {
            return Err(TrainError::Config("empty batches".into()));
        }
        Ok(Self {
            unlabeled: split.unlabeled.clone(),
            labeled: split.labeled.clone(),
            unlabeled_batch: cfg.unlabeled_batch,
            labeled_batch: cfg.labeled_batch,
            seed: cfg.seed,
        })
    }

    /// `ceil(N_u / B_u)`; over the labeled set instead when there is no
    /// unlabeled batch.
    pub fn steps_per_epoch(&self) -> usize {
        if self.unlabeled_batch > 0 {
            self.unlabeled.len().div_ceil(self.unlabeled_batch)
        } else {
            self.labeled.len().div_ceil(self.labeled_batch)
        }
    }

    fn unlabeled_order(&self, epoch: usize) -> Vec<usize> {
        let mut order = self.unlabeled.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, UNLABELED_STREAM, epoch as u64])));
        order
    }

    fn labeled_cycle(&self, cycle: usize) -> Vec<usize> {
        let mut order = self.labeled.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, LABELED_STREAM, cycle as u64])));
        order
    }

    pub fn batch(&self, epoch: usize, step_in_epoch: usize, global_step: usize) -> Batch {
        let unlabeled = if self.unlabeled_batch > 0 {
            let order = self.unlabeled_order(epoch);
            let start = (step_in_epoch * self.unlabeled_batch).min(order.len());
            let end = (start + self.unlabeled_batch).min(order.len());
            order[start..end].to_vec()
        } else {
            Vec::new()
        };
        let mut labeled = Vec::with_capacity(self.labeled_batch);
        if self.labeled_batch > 0 {
            let n = self.labeled.len();
            let mut pos = global_step * self.labeled_batch;
            let mut cycle = usize::MAX;
            let mut order = Vec::new();
            while labeled.len() < self.labeled_batch {
                if pos / n != cycle {
                    cycle = pos / n;
                    order = self.labeled_cycle(cycle);
                }
                labeled.push(order[pos % n]);
                pos += 1;
            }
        }
        Batch { epoch, step_in_epoch, global_step, unlabeled, labeled }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(n: usize, labeled: usize) -> Split {
        Split { labeled: (0..labeled).collect(), unlabeled: (0..n).collect() }
    }

    #[test]
    fn remainder_batch() {
        let cfg = TrainConfig { unlabeled_batch: 256, labeled_batch: 0, ..TrainConfig::default() };
        let s = BatchSampler::new(&split(1000, 0), &cfg).unwrap();
        assert_eq!(s.steps_per_epoch(), 4);
        let sizes: Vec<_> = (0..4).map(|i| s.batch(0, i, i).unlabeled.len()).collect();
        assert_eq!(sizes, vec![256, 256, 256, 232]);
        let mut seen: Vec<usize> = (0..4).flat_map(|i| s.batch(0, i, i).unlabeled).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn labeled_cycles_cover_every_sample() {
        let cfg = TrainConfig { unlabeled_batch: 10, labeled_batch: 3, ..TrainConfig::default() };
        let s = BatchSampler::new(&split(100, 7), &cfg).unwrap();
        let stream: Vec<usize> = (0..7).flat_map(|g| s.batch(0, g, g).labeled).collect();
        for cycle in stream.chunks(7) {
            let mut c = cycle.to_vec();
            c.sort_unstable();
            assert_eq!(c, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = TrainConfig { unlabeled_batch: 16, labeled_batch: 4, ..TrainConfig::default() };
        let a = BatchSampler::new(&split(100, 20), &cfg).unwrap();
        let b = BatchSampler::new(&split(100, 20), &cfg).unwrap();
        for g in 0..20 {
            assert_eq!(a.batch(g / 7, g % 7, g), b.batch(g / 7, g % 7, g));
        }
        assert_ne!(a.batch(0, 0, 0).unlabeled, a.batch(1, 0, 7).unlabeled);
    }

    #[test]
    fn missing_labels_is_config_error() {
        let cfg = TrainConfig { labeled_batch: 4, ..TrainConfig::default() };
        assert!(matches!(BatchSampler::new(&split(100, 0), &cfg), Err(TrainError::Config(_))));
    }
}
