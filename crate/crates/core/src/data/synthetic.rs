use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, Dataset};
use crate::gradcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    GaussianBlobs,
    TwoMoons,
    ConcentricRings,
}

impl SyntheticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::GaussianBlobs => "gaussian_blobs",
            SyntheticKind::TwoMoons => "two_moons",
            SyntheticKind::ConcentricRings => "concentric_rings",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntheticKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian_blobs" | "blobs" => Ok(SyntheticKind::GaussianBlobs),
            "two_moons" | "moons" => Ok(SyntheticKind::TwoMoons),
            "concentric_rings" | "rings" => Ok(SyntheticKind::ConcentricRings),
            other => Err(DataError::Config(format!(
                "unknown dataset kind {other:?} (expected gaussian_blobs, two_moons or concentric_rings)"
            ))),
        }
    }
}

/// Draws `n` samples in `d` dimensions with unit isotropic noise.
///
/// * `gaussian_blobs`: class means sit at pairwise distance `separation`
///   (scaled basis vectors while `classes ≤ d`, random directions otherwise).
/// * `two_moons`: interleaved half circles of radius `separation` in the
///   first two coordinates.
/// * `concentric_rings`: ring `k` has radius `separation·(k+1)`.
///
/// Labels are dealt round-robin and shuffled, so class counts differ by at
/// most one.
pub fn make_synthetic(
    kind: SyntheticKind,
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 || d < 2 {
        return Err(DataError::Config(format!("need classes ≥ 2 and d ≥ 2, got {classes} and {d}")));
    }
    if kind == SyntheticKind::TwoMoons && classes != 2 {
        return Err(DataError::Config(format!("two_moons requires classes=2, got {classes}")));
    }
    if n < classes {
        return Err(DataError::Config(format!("n={n} is smaller than the class count {classes}")));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(DataError::Config(format!("separation must be finite and ≥ 0, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let centers: Vec<Vec<f64>> = match kind {
        SyntheticKind::GaussianBlobs => {
            let r = separation / 2f64.sqrt();
            (0..classes)
                .map(|k| {
                    if classes <= d {
                        (0..d).map(|j| if j == k { r } else { 0.0 }).collect()
                    } else {
                        let v: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        v.iter().map(|x| r * x / norm).collect()
                    }
                })
                .collect()
        }
        _ => Vec::new(),
    };

    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        let mut x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        match kind {
            SyntheticKind::GaussianBlobs => {
                x.iter_mut().zip(&centers[y]).for_each(|(v, c)| *v += c);
            }
            SyntheticKind::TwoMoons => {
                let t = rng.random_range(0.0..std::f64::consts::PI);
                let (px, py) = if y == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
                x[0] += separation * px;
                x[1] += separation * py;
            }
            SyntheticKind::ConcentricRings => {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                let r = separation * (y + 1) as f64;
                x[0] += r * t.cos();
                x[1] += r * t.sin();
            }
        }
        data.extend(x);
    }
    Dataset::new(Tensor::matrix(n, d, data), labels, classes, kind.as_str())
}

/// One draw of `n + test_n` samples split into a training set and a
/// held-out test set from the same distribution.
pub fn make_synthetic_with_test(
    kind: SyntheticKind,
    n: usize,
    test_n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if test_n < classes {
        return Err(DataError::Config(format!("test_n={test_n} is smaller than the class count {classes}")));
    }
    let all = make_synthetic(kind, n + test_n, d, classes, separation, seed)?;
    let train_idx: Vec<usize> = (0..n).collect();
    let test_idx: Vec<usize> = (n..n + test_n).collect();
    let (xs, ys) = all.gather(&train_idx);
    let (xt, yt) = all.gather(&test_idx);
    Ok((Dataset::new(xs, ys, classes, &all.name)?, Dataset::new(xt, yt, classes, &format!("{}_test", all.name))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = make_synthetic(SyntheticKind::GaussianBlobs, 803, 16, 8, 4.0, 1).unwrap();
        let b = make_synthetic(SyntheticKind::GaussianBlobs, 803, 16, 8, 4.0, 1).unwrap();
        assert_eq!(a, b);
        let counts = a.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_ne!(a, make_synthetic(SyntheticKind::GaussianBlobs, 803, 16, 8, 4.0, 2).unwrap());
    }

    #[test]
    fn moons_need_two_classes() {
        assert!(make_synthetic(SyntheticKind::TwoMoons, 100, 2, 3, 1.0, 0).is_err());
        assert!(make_synthetic(SyntheticKind::TwoMoons, 100, 2, 2, 1.0, 0).is_ok());
        assert!(make_synthetic(SyntheticKind::ConcentricRings, 100, 3, 3, 2.0, 0).is_ok());
    }

    #[test]
    fn kind_names_parse() {
        for k in [SyntheticKind::GaussianBlobs, SyntheticKind::TwoMoons, SyntheticKind::ConcentricRings] {
            assert_eq!(k.as_str().parse::<SyntheticKind>().unwrap(), k);
        }
        assert!("spirals".parse::<SyntheticKind>().is_err());
    }

    #[test]
    fn huge_separation_is_nearest_centroid_separable() {
        let ds = make_synthetic(SyntheticKind::GaussianBlobs, 400, 6, 10, 1e6, 3).unwrap();
        let mut sums = vec![vec![0.0; 6]; 10];
        for i in 0..ds.len() {
            sums[ds.labels[i]].iter_mut().zip(ds.sample(i)).for_each(|(s, v)| *s += v);
        }
        let hits = (0..ds.len())
            .filter(|&i| {
                let best = (0..10)
                    .min_by(|&a, &b| {
                        let da: f64 = sums[a].iter().zip(ds.sample(i)).map(|(c, v)| (c / 40.0 - v).powi(2)).sum();
                        let db: f64 = sums[b].iter().zip(ds.sample(i)).map(|(c, v)| (c / 40.0 - v).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == ds.labels[i]
            })
            .count();
        assert_eq!(hits, ds.len());
    }
}
