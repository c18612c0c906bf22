use super::{softmax_in_place, AssignError, Assignment, LogitBatch};
use crate::gradcore::Tensor;

/// EMA estimate of the mean teacher logit, used to de-bias assignments.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterState {
    pub gamma: Vec<f64>,
    /// EMA rate; 1 freezes the center, 0 replaces it with the batch mean.
    pub mu: f64,
}

impl CenterState {
    pub fn zeros(num_prototypes: usize, mu: f64) -> Self {
        Self { gamma: vec![0.0; num_prototypes], mu }
    }

    pub fn norm(&self) -> f64 {
        self.gamma.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Row-wise `softmax((logits − γ) / ε)`.
pub fn center_sharpen_assign(teacher_logits: &LogitBatch, center: &CenterState, epsilon: f64) -> Result<Assignment, AssignError> {
    if !(epsilon > 0.0) {
        return Err(AssignError::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    let (b, c) = (teacher_logits.batch_size(), teacher_logits.num_prototypes());
    if center.gamma.len() != c {
        return Err(AssignError::Width { expected: center.gamma.len(), got: c });
    }
    if !center.gamma.iter().all(|v| v.is_finite()) {
        return Err(AssignError::NonFinite);
    }
    let mut out = teacher_logits.values().clone().into_data();
    for row in out.chunks_mut(c) {
        for (v, g) in row.iter_mut().zip(&center.gamma) {
            *v = (*v - g) / epsilon;
        }
        softmax_in_place(row);
    }
    Ok(Assignment(Tensor::matrix(b, c, out)))
}

/// `γ ← μγ + (1−μ)·mean(batch)`.
pub fn update_center(center: &CenterState, batch_logits: &LogitBatch) -> Result<CenterState, AssignError> {
    if center.gamma.len() != batch_logits.num_prototypes() {
        return Err(AssignError::Width { expected: center.gamma.len(), got: batch_logits.num_prototypes() });
    }
    let mean = batch_logits.values().column_means();
    let mu = center.mu;
    let gamma = center.gamma.iter().zip(&mean).map(|(g, m)| mu * g + (1.0 - mu) * m).collect();
    Ok(CenterState { gamma, mu })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[Vec<f64>]) -> LogitBatch {
        LogitBatch::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_center_unit_eps_is_softmax() {
        let b = batch(&[vec![1.0, 2.0, 3.0]]);
        let a = center_sharpen_assign(&b, &CenterState::zeros(3, 0.9), 1.0).unwrap();
        let z: f64 = [1f64, 2., 3.].iter().map(|v| v.exp()).sum();
        for (k, v) in a.values().data().iter().enumerate() {
            assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn row_equal_to_center_is_uniform() {
        let b = batch(&[vec![0.3, -0.2, 0.9, 0.1]]);
        let c = CenterState { gamma: vec![0.3, -0.2, 0.9, 0.1], mu: 0.9 };
        let a = center_sharpen_assign(&b, &c, 0.04).unwrap();
        assert!(a.values().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn equalized_logits_are_split_evenly() {
        let b = batch(&[vec![1.0, 0.0]]);
        let c = CenterState { gamma: vec![0.5, -0.5], mu: 0.9 };
        let a = center_sharpen_assign(&b, &c, 0.07).unwrap();
        assert_eq!(a.values().data(), &[0.5, 0.5]);
    }

    #[test]
    fn center_update_laws() {
        let b = batch(&[vec![2.0, -1.0], vec![0.0, -1.0]]);
        let start = CenterState { gamma: vec![0.25, 4.0], mu: 1.0 };
        assert_eq!(update_center(&start, &b).unwrap().gamma, start.gamma);
        let copy = update_center(&CenterState { mu: 0.0, ..start.clone() }, &b).unwrap();
        assert_eq!(copy.gamma, vec![1.0, -1.0]);
        let ema = update_center(&CenterState::zeros(2, 0.9), &b).unwrap();
        assert!((ema.gamma[0] - 0.1).abs() < 1e-15 && (ema.gamma[1] + 0.1).abs() < 1e-15);
    }
}
