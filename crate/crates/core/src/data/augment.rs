use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{derive_seed, DataError, Dataset};
use crate::gradcore::Tensor;

/// Environment variable capping the number of view-generation workers.
pub const THREADS_ENV: &str = "SUAVE_LAB_THREADS";

/// Vector analog of multi-crop: each view is `scale·(x ⊙ mask) + noise`.
/// Global views are mildly corrupted and source the targets; local views
/// are corrupted harder and only predict. Labeled views get noise alone.
#[derive(Clone, Debug, PartialEq)]
pub struct AugPolicy {
    pub global_views: usize,
    pub local_views: usize,
    pub global_noise_sigma: f64,
    pub local_noise_sigma: f64,
    /// Probability of zeroing each feature.
    pub global_mask_frac: f64,
    pub local_mask_frac: f64,
    pub labeled_noise_sigma: f64,
    /// Inclusive range of the per-view scale factor.
    pub scale_jitter_range: (f64, f64),
}

impl Default for AugPolicy {
    fn default() -> Self {
        Self {
            global_views: 2,
            local_views: 2,
            global_noise_sigma: 0.3,
            local_noise_sigma: 0.6,
            global_mask_frac: 0.1,
            local_mask_frac: 0.3,
            labeled_noise_sigma: 0.1,
            scale_jitter_range: (0.9, 1.1),
        }
    }
}

impl AugPolicy {
    /// Two untouched global views, no local views.
    pub fn identity() -> Self {
        Self {
            global_views: 2,
            local_views: 0,
            global_noise_sigma: 0.0,
            local_noise_sigma: 0.0,
            global_mask_frac: 0.0,
            local_mask_frac: 0.0,
            labeled_noise_sigma: 0.0,
            scale_jitter_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Config(msg));
        if self.global_views == 0 {
            return bad("at least one global view is required".into());
        }
        for (name, f) in [("global_mask_frac", self.global_mask_frac), ("local_mask_frac", self.local_mask_frac)] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} must be in [0, 1), got {f}"));
            }
        }
        for (name, s) in [
            ("global_noise_sigma", self.global_noise_sigma),
            ("local_noise_sigma", self.local_noise_sigma),
            ("labeled_noise_sigma", self.labeled_noise_sigma),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("{name} must be finite and ≥ 0, got {s}"));
            }
        }
        let (lo, hi) = self.scale_jitter_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("scale range must satisfy 0 < lo ≤ hi, got [{lo}, {hi}]"));
        }
        if self.local_views > 0 {
            if self.local_noise_sigma < self.global_noise_sigma || self.local_mask_frac < self.global_mask_frac {
                return bad("local views must be corrupted at least as strongly as global views".into());
            }
            if !(self.local_noise_sigma > self.labeled_noise_sigma || self.local_mask_frac > 0.0) {
                return bad("local views must be corrupted more strongly than labeled views".into());
            }
        }
        Ok(())
    }
}

/// Views of one sample. Only `globals` may source targets downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    pub globals: Vec<Vec<f64>>,
    pub locals: Vec<Vec<f64>>,
    pub labeled_view: Vec<f64>,
}

fn corrupt(sample: &[f64], noise: f64, mask: f64, (lo, hi): (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    sample
        .iter()
        .map(|&x| {
            let keep = mask == 0.0 || rng.random::<f64>() >= mask;
            let z: f64 = if noise > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
            let e = noise * z;
            scale * if keep { x } else { 0.0 } + e
        })
        .collect()
}

fn unlabeled_views(sample: &[f64], p: &AugPolicy, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let globals = (0..p.global_views)
        .map(|_| corrupt(sample, p.global_noise_sigma, p.global_mask_frac, p.scale_jitter_range, rng))
        .collect();
    let locals =
        (0..p.local_views).map(|_| corrupt(sample, p.local_noise_sigma, p.local_mask_frac, p.scale_jitter_range, rng)).collect();
    (globals, locals)
}

fn labeled_view(sample: &[f64], p: &AugPolicy, rng: &mut ChaCha8Rng) -> Vec<f64> {
    corrupt(sample, p.labeled_noise_sigma, 0.0, p.scale_jitter_range, rng)
}

/// All views of a single sample, drawn from `rng` in a fixed order.
pub fn augment_views(sample: &[f64], policy: &AugPolicy, rng: &mut ChaCha8Rng) -> ViewSet {
    let (globals, locals) = unlabeled_views(sample, policy, rng);
    ViewSet { globals, locals, labeled_view: labeled_view(sample, policy, rng) }
}

/// Views of an unlabeled batch, stacked per view slot (`B × d` each).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchViews {
    pub globals: Vec<Tensor>,
    pub locals: Vec<Tensor>,
}

/// Shared worker pool for view generation, sized by `SUAVE_LAB_THREADS`
/// when set.
pub fn worker_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        b.build().expect("view worker pool")
    })
}

fn stack(rows: Vec<Vec<f64>>, d: usize) -> Tensor {
    let n = rows.len();
    Tensor::matrix(n, d, rows.into_iter().flatten().collect())
}

/// Global and local views for `indices`. Each sample's randomness comes
/// from `(seed, epoch, index)` alone, so the result does not depend on the
/// number of workers.
pub fn augment_batch(dataset: &Dataset, indices: &[usize], policy: &AugPolicy, seed: u64, epoch: u64) -> BatchViews {
    let per_sample: Vec<_> = worker_pool().install(|| {
        indices
            .par_iter()
            .map(|&i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch, i as u64, 0]));
                unlabeled_views(dataset.sample(i), policy, &mut rng)
            })
            .collect()
    });
    let d = dataset.dim();
    let mut globals = vec![Vec::with_capacity(indices.len()); policy.global_views];
    let mut locals = vec![Vec::with_capacity(indices.len()); policy.local_views];
    for (g, l) in per_sample {
        globals.iter_mut().zip(g).for_each(|(slot, v)| slot.push(v));
        locals.iter_mut().zip(l).for_each(|(slot, v)| slot.push(v));
    }
    BatchViews {
        globals: globals.into_iter().map(|rows| stack(rows, d)).collect(),
        locals: locals.into_iter().map(|rows| stack(rows, d)).collect(),
    }
}

/// Weakly corrupted labeled rows. Labeled samples recur within an epoch,
/// so the step number also enters the seed.
pub fn augment_labeled(dataset: &Dataset, indices: &[usize], policy: &AugPolicy, seed: u64, epoch: u64, step: u64) -> Tensor {
    let rows: Vec<Vec<f64>> = worker_pool().install(|| {
        indices
            .par_iter()
            .map(|&i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch, i as u64, 1, step]));
                labeled_view(dataset.sample(i), policy, &mut rng)
            })
            .collect()
    });
    stack(rows, dataset.dim())
}
