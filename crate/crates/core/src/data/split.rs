use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelAmount {
    PerClass(usize),
    /// Fraction of each class, rounded, at least one per class when > 0.
    Fraction(f64),
    All,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub amount: LabelAmount,
    pub seed: u64,
}

/// Index sets for training. `unlabeled` always covers the whole dataset:
/// labeled rows are drawn as unlabeled samples too.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

pub fn split_labels(dataset: &Dataset, spec: &SplitSpec) -> Result<Split, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut labeled = Vec::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        let take = match spec.amount {
            LabelAmount::All => members.len(),
            LabelAmount::PerClass(k) => {
                if k > members.len() {
                    return Err(DataError::Config(format!(
                        "{k} labels per class requested but class {c} has {} samples",
                        members.len()
                    )));
                }
                k
            }
            LabelAmount::Fraction(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(DataError::Config(format!("label fraction must be in [0, 1], got {f}")));
                }
                let k = (f * members.len() as f64).round() as usize;
                if f > 0.0 {
                    k.max(1).min(members.len())
                } else {
                    0
                }
            }
        };
        members.shuffle(&mut rng);
        labeled.extend_from_slice(&members[..take]);
    }
    labeled.sort_unstable();
    Ok(Split { labeled, unlabeled: (0..dataset.len()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticKind};

    fn blobs() -> Dataset {
        make_synthetic(SyntheticKind::GaussianBlobs, 800, 4, 8, 3.0, 0).unwrap()
    }

    #[test]
    fn per_class_counts_are_exact() {
        let ds = blobs();
        let s = split_labels(&ds, &SplitSpec { amount: LabelAmount::PerClass(4), seed: 1 }).unwrap();
        assert_eq!(s.labeled.len(), 32);
        let mut counts = [0; 8];
        s.labeled.iter().for_each(|&i| counts[ds.labels[i]] += 1);
        assert!(counts.iter().all(|&c| c == 4));
        assert_eq!(s.unlabeled.len(), 800);
        assert_eq!(s, split_labels(&ds, &SplitSpec { amount: LabelAmount::PerClass(4), seed: 1 }).unwrap());
    }

    #[test]
    fn all_and_infeasible() {
        let ds = blobs();
        let s = split_labels(&ds, &SplitSpec { amount: LabelAmount::All, seed: 0 }).unwrap();
        assert_eq!(s.labeled, (0..800).collect::<Vec<_>>());
        assert!(split_labels(&ds, &SplitSpec { amount: LabelAmount::PerClass(101), seed: 0 }).is_err());
        let f = split_labels(&ds, &SplitSpec { amount: LabelAmount::Fraction(0.01), seed: 0 }).unwrap();
        assert_eq!(f.labeled.len(), 8);
    }
}
