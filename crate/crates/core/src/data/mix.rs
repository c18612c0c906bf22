use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::DataError;
use crate::gradcore::Tensor;
use crate::objective::TargetBatch;

#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    pub enabled: bool,
    /// Both Beta parameters of the mixing coefficient.
    pub beta_alpha: f64,
    /// Probability of the block-swap variant instead of interpolation.
    pub cutmix_prob: f64,
    /// Probability that a batch is mixed at all.
    pub mix_prob: f64,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self { enabled: true, beta_alpha: 1.0, cutmix_prob: 0.5, mix_prob: 1.0 }
    }
}

impl MixSpec {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.beta_alpha > 0.0 && self.beta_alpha.is_finite()) {
            return Err(DataError::Config(format!("beta_alpha must be > 0, got {}", self.beta_alpha)));
        }
        for (name, p) in [("cutmix_prob", self.cutmix_prob), ("mix_prob", self.mix_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MixKind {
    /// `λ·x_i + (1−λ)·x_j`.
    MixUp,
    /// Features `start..start+len` come from the partner.
    CutMix { start: usize, len: usize },
}

/// One random mixing decision, reusable across views that must be mixed
/// identically.
#[derive(Clone, Debug, PartialEq)]
pub struct MixPlan {
    pub kind: MixKind,
    /// Weight of the original sample, realized (block fraction for CutMix).
    pub lambda: f64,
    /// Partner of each row.
    pub partner: Vec<usize>,
}

impl MixPlan {
    /// `None` when mixing is off, skipped this batch, or the batch has
    /// fewer than two rows.
    pub fn draw<R: Rng + ?Sized>(batch: usize, dim: usize, spec: &MixSpec, rng: &mut R) -> Result<Option<MixPlan>, DataError> {
        spec.validate()?;
        if !spec.enabled || batch < 2 || dim == 0 {
            return Ok(None);
        }
        if spec.mix_prob < 1.0 && rng.random::<f64>() >= spec.mix_prob {
            return Ok(None);
        }
        let beta = Beta::new(spec.beta_alpha, spec.beta_alpha).map_err(|e| DataError::Config(e.to_string()))?;
        let lambda: f64 = beta.sample(rng);
        let mut partner: Vec<usize> = (0..batch).collect();
        partner.shuffle(rng);
        let cut = rng.random::<f64>() < spec.cutmix_prob;
        Ok(Some(if cut {
            let len = ((1.0 - lambda) * dim as f64).round() as usize;
            let start = rng.random_range(0..=dim - len);
            MixPlan { kind: MixKind::CutMix { start, len }, lambda: 1.0 - len as f64 / dim as f64, partner }
        } else {
            MixPlan { kind: MixKind::MixUp, lambda, partner }
        }))
    }

    /// The mixed rows and targets only (not concatenated).
    pub fn apply(&self, views: &Tensor, targets: &TargetBatch) -> Result<(Tensor, TargetBatch), DataError> {
        let (n, d) = (views.rows(), views.cols());
        if n != self.partner.len() || targets.rows() != n {
            return Err(DataError::Consistency(format!(
                "mix plan for {} rows applied to {n} views and {} targets",
                self.partner.len(),
                targets.rows()
            )));
        }
        let lam = self.lambda;
        let mut out = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let (a, b) = (views.row(i), views.row(self.partner[i]));
            let row = out.row_mut(i);
            match self.kind {
                MixKind::MixUp => {
                    for j in 0..d {
                        row[j] = lam * a[j] + (1.0 - lam) * b[j];
                    }
                }
                MixKind::CutMix { start, len } => {
                    row.copy_from_slice(a);
                    row[start..start + len].copy_from_slice(&b[start..start + len]);
                }
            }
        }
        let t = targets.values();
        let c = t.cols();
        let mut mixed = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let (a, b) = (t.row(i), t.row(self.partner[i]));
            for (k, m) in mixed.row_mut(i).iter_mut().enumerate() {
                *m = lam * a[k] + (1.0 - lam) * b[k];
            }
        }
        let mixed = TargetBatch::new(mixed, targets.origin().to_vec()).map_err(|e| DataError::Consistency(e.to_string()))?;
        Ok((out, mixed))
    }
}

/// Mixes a batch with shuffled partners and appends the mixed rows, so the
/// output holds `2·B` rows (or the input unchanged when mixing is skipped).
pub fn mix_batch<R: Rng + ?Sized>(
    views: &Tensor,
    targets: &TargetBatch,
    spec: &MixSpec,
    rng: &mut R,
) -> Result<(Tensor, TargetBatch), DataError> {
    match MixPlan::draw(views.rows(), views.cols(), spec, rng)? {
        None => Ok((views.clone(), targets.clone())),
        Some(plan) => {
            let (mv, mt) = plan.apply(views, targets)?;
            let v = Tensor::concat_rows(&[views, &mv]).map_err(|e| DataError::Consistency(e.to_string()))?;
            let t = targets.concat(&mt).map_err(|e| DataError::Consistency(e.to_string()))?;
            Ok((v, t))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::smooth_class_labels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch() -> (Tensor, TargetBatch) {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.0, 1.0, 0.5], vec![0.0, 0.0, 9.0, 9.0]]).unwrap();
        (x, smooth_class_labels(&[0, 1, 2], 3, 0.0).unwrap())
    }

    #[test]
    fn lambda_one_is_identity() {
        let (x, t) = batch();
        let plan = MixPlan { kind: MixKind::MixUp, lambda: 1.0, partner: vec![2, 0, 1] };
        let (mx, mt) = plan.apply(&x, &t).unwrap();
        assert_eq!(mx, x);
        assert_eq!(mt.values(), t.values());
        let plan = MixPlan { kind: MixKind::CutMix { start: 2, len: 0 }, lambda: 1.0, partner: vec![2, 0, 1] };
        assert_eq!(plan.apply(&x, &t).unwrap().0, x);
    }

    #[test]
    fn half_mixup_of_one_hots() {
        let (x, t) = batch();
        let plan = MixPlan { kind: MixKind::MixUp, lambda: 0.5, partner: vec![1, 0, 2] };
        let (_, mt) = plan.apply(&x, &t).unwrap();
        assert_eq!(mt.values().row(0), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn output_doubles_and_rows_stay_stochastic() {
        let (x, t) = batch();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (mx, mt) = mix_batch(&x, &t, &MixSpec::default(), &mut rng).unwrap();
            assert_eq!(mx.rows(), 6);
            assert_eq!(mt.rows(), 6);
            for i in 0..6 {
                assert!((mt.values().row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let one = x.slice_rows(0, 1);
        let (m1, _) = mix_batch(&one, &t.prefix(1), &MixSpec::default(), &mut rng).unwrap();
        assert_eq!(m1.rows(), 1);
    }

    #[test]
    fn cutmix_lambda_matches_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = MixSpec { cutmix_prob: 1.0, ..MixSpec::default() };
        for _ in 0..200 {
            let plan = MixPlan::draw(4, 7, &spec, &mut rng).unwrap().unwrap();
            let MixKind::CutMix { start, len } = plan.kind else { panic!("expected cutmix") };
            assert!(start + len <= 7);
            assert_eq!(plan.lambda, 1.0 - len as f64 / 7.0);
        }
    }

    #[test]
    fn nonpositive_alpha_rejected() {
        let spec = MixSpec { beta_alpha: 0.0, ..MixSpec::default() };
        assert!(spec.validate().is_err());
    }
}
