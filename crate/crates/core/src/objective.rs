//! One cross-entropy for everything: labeled rows are scored against
//! smoothed ground truth, unlabeled views against clustering assignments
//! computed on the (other) global views.

use thiserror::Error;

use crate::assign::Assignment;
use crate::gradcore::{GradError, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetOrigin {
    Label,
    Pseudo,
}

/// Detached soft targets, one distribution per row.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBatch {
    values: Tensor,
    origin: Vec<TargetOrigin>,
}

const ROW_SUM_TOL: f64 = 1e-9;

impl TargetBatch {
    pub fn new(values: Tensor, origin: Vec<TargetOrigin>) -> Result<Self, ObjectiveError> {
        if values.rows() != origin.len() && !values.is_empty() {
            return Err(ObjectiveError::Contract("one origin flag per target row".into()));
        }
        for i in 0..values.rows().min(origin.len()) {
            let s: f64 = values.row(i).iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL || values.row(i).iter().any(|&v| v < 0.0) {
                return Err(ObjectiveError::Contract(format!("target row {i} is not a distribution (sum {s})")));
            }
        }
        Ok(Self { values, origin })
    }

    pub fn from_assignment(a: &Assignment) -> Self {
        let n = a.rows();
        Self { values: a.values().clone(), origin: vec![TargetOrigin::Pseudo; n] }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn origin(&self) -> &[TargetOrigin] {
        &self.origin
    }

    pub fn rows(&self) -> usize {
        self.origin.len()
    }

    pub fn prefix(&self, rows: usize) -> TargetBatch {
        TargetBatch { values: self.values.slice_rows(0, rows), origin: self.origin[..rows].to_vec() }
    }

    /// Row-wise concatenation.
    pub fn concat(&self, other: &TargetBatch) -> Result<TargetBatch, ObjectiveError> {
        let values = Tensor::concat_rows(&[&self.values, &other.values])?;
        let mut origin = self.origin.clone();
        origin.extend_from_slice(&other.origin);
        Ok(TargetBatch { values, origin })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewPairing {
    /// A global view's target supervises every other view.
    Swapped,
    /// Also lets each global view predict its own target.
    Plain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Prediction temperature.
    pub tau: f64,
    pub label_smoothing: f64,
    pub view_pairing: ViewPairing,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.1, label_smoothing: 0.01, view_pairing: ViewPairing::Swapped }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.tau > 0.0) {
            return Err(ObjectiveError::Contract(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(ObjectiveError::Contract(format!("label smoothing must be in [0, 0.5), got {}", self.label_smoothing)));
        }
        Ok(())
    }
}

/// Sum over rows of `−Σ_k y_k log softmax(logits/τ)_k`.
fn cross_entropy_sum(tape: &mut Tape, log_probs: Var, targets: &Tensor) -> Result<Var, ObjectiveError> {
    let t = tape.constant(targets.clone());
    let prod = tape.mul(log_probs, t)?;
    let s = tape.sum(prod)?;
    Ok(tape.scale(s, -1.0)?)
}

fn tempered_log_softmax(tape: &mut Tape, logits: Var, tau: f64) -> Result<Var, ObjectiveError> {
    let scaled = tape.scale(logits, 1.0 / tau)?;
    Ok(tape.log_softmax_rows(scaled)?)
}

/// Mean over rows of the soft cross-entropy between `targets` and
/// `softmax(logits / tau)`. Differentiable with respect to `logits` only.
pub fn soft_cross_entropy(tape: &mut Tape, logits: Var, targets: &TargetBatch, tau: f64) -> Result<Var, ObjectiveError> {
    if !(tau > 0.0) {
        return Err(ObjectiveError::Contract(format!("tau must be > 0, got {tau}")));
    }
    let shape = tape.value(logits).shape().to_vec();
    if shape != targets.values.shape() {
        return Err(ObjectiveError::Contract(format!("logits {shape:?} vs targets {:?}", targets.values.shape())));
    }
    let n = targets.rows();
    if n == 0 {
        return Err(ObjectiveError::Contract("empty target batch".into()));
    }
    let ls = tempered_log_softmax(tape, logits, tau)?;
    let s = cross_entropy_sum(tape, ls, &targets.values)?;
    Ok(tape.scale(s, 1.0 / n as f64)?)
}

/// One-hot rows mixed with the uniform distribution:
/// hot = 1 − factor + factor/C, cold = factor/C.
pub fn smooth_labels(one_hot: &Tensor, factor: f64) -> Result<TargetBatch, ObjectiveError> {
    let c = one_hot.cols();
    let mut values = one_hot.clone();
    for i in 0..one_hot.rows() {
        let row = one_hot.row(i);
        let hot = row.iter().filter(|&&v| v == 1.0).count();
        let cold = row.iter().filter(|&&v| v == 0.0).count();
        if hot != 1 || hot + cold != c {
            return Err(ObjectiveError::Contract(format!("row {i} is not one-hot")));
        }
    }
    let base = factor / c as f64;
    values.data_mut().iter_mut().for_each(|v| *v = *v * (1.0 - factor) + base);
    Ok(TargetBatch { values, origin: vec![TargetOrigin::Label; one_hot.rows()] })
}

/// Smoothed targets from class ids.
pub fn smooth_class_labels(labels: &[usize], classes: usize, factor: f64) -> Result<TargetBatch, ObjectiveError> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(ObjectiveError::Contract(format!("label {bad} out of range for {classes} classes")));
    }
    smooth_labels(&crate::model::one_hot(labels, classes), factor)
}

/// Merges per-row sources: a class label (smoothed) or a pseudo-label row.
/// Exactly one source per row.
pub fn build_targets(
    labels: &[Option<usize>],
    assignments: &[Option<&[f64]>],
    classes: usize,
    cfg: &LossConfig,
) -> Result<TargetBatch, ObjectiveError> {
    if labels.len() != assignments.len() {
        return Err(ObjectiveError::Contract("labels and assignments must have one entry per row".into()));
    }
    let f = cfg.label_smoothing;
    let mut data = Vec::with_capacity(labels.len() * classes);
    let mut origin = Vec::with_capacity(labels.len());
    for (i, (label, assignment)) in labels.iter().zip(assignments).enumerate() {
        match (label, assignment) {
            (Some(y), None) => {
                if *y >= classes {
                    return Err(ObjectiveError::Contract(format!("row {i}: label {y} out of range")));
                }
                data.extend((0..classes).map(|k| if k == *y { 1.0 - f + f / classes as f64 } else { f / classes as f64 }));
                origin.push(TargetOrigin::Label);
            }
            (None, Some(row)) => {
                if row.len() != classes {
                    return Err(ObjectiveError::Contract(format!("row {i}: assignment width {}", row.len())));
                }
                data.extend_from_slice(row);
                origin.push(TargetOrigin::Pseudo);
            }
            (Some(_), Some(_)) => return Err(ObjectiveError::Contract(format!("row {i} has both a label and an assignment"))),
            (None, None) => return Err(ObjectiveError::Contract(format!("row {i} has no target source"))),
        }
    }
    TargetBatch::new(Tensor::matrix(labels.len(), classes, data), origin)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewKind {
    Global,
    Local,
}

/// Student logits for one augmented view of the unlabeled batch. Global
/// views carry the target computed from them; local views carry none.
#[derive(Clone, Debug)]
pub struct ViewInput {
    pub logits: Var,
    pub kind: ViewKind,
    pub target: Option<TargetBatch>,
}

/// Loss value plus its decomposition.
#[derive(Clone, Debug)]
pub struct MultiviewLoss {
    pub total: Var,
    /// Mean labeled cross-entropy (0 when there are no labeled rows).
    pub sup: f64,
    /// Mean unlabeled cross-entropy over all (view, target) pairs.
    pub unsup: f64,
    pub n_labeled_terms: usize,
    pub n_unlabeled_terms: usize,
}

/// Combined objective over unlabeled views and an optional labeled batch.
///
/// Every unlabeled term pairs a view `v` with a global target `g` (`v ≠ g`
/// under swapped pairing). A view shorter than its target uses the leading
/// target rows; mixed rows are only appended to global views. The total
/// weighs every row-level cross-entropy term equally:
/// `(n_l·L_sup + n_u·L_unsup) / (n_l + n_u)`.
pub fn multiview_loss(
    tape: &mut Tape,
    views: &[ViewInput],
    labeled: Option<(Var, &TargetBatch)>,
    cfg: &LossConfig,
) -> Result<MultiviewLoss, ObjectiveError> {
    cfg.validate()?;
    let mut globals = Vec::new();
    for (i, v) in views.iter().enumerate() {
        match (v.kind, &v.target) {
            (ViewKind::Global, Some(t)) => globals.push((i, t)),
            (ViewKind::Global, None) => return Err(ObjectiveError::Contract(format!("global view {i} has no target"))),
            (ViewKind::Local, Some(_)) => return Err(ObjectiveError::Contract(format!("local view {i} carries a target"))),
            (ViewKind::Local, None) => {}
        }
    }
    if !views.is_empty() {
        let ok = match cfg.view_pairing {
            ViewPairing::Swapped => globals.len() == 2,
            ViewPairing::Plain => !globals.is_empty(),
        };
        if !ok {
            return Err(ObjectiveError::Contract(format!("{:?} pairing with {} global views", cfg.view_pairing, globals.len())));
        }
    }

    let mut terms: Vec<Var> = Vec::new();
    let mut unsup_sum = 0.0;
    let mut n_u = 0;
    for (vi, view) in views.iter().enumerate() {
        let rows = tape.value(view.logits).rows();
        let mut log_probs = None;
        for &(gi, target) in &globals {
            if gi == vi && cfg.view_pairing == ViewPairing::Swapped {
                continue;
            }
            if target.rows() < rows || target.values.cols() != tape.value(view.logits).cols() {
                return Err(ObjectiveError::Contract(format!("view {vi} does not match the target of view {gi}")));
            }
            let ls = match log_probs {
                Some(ls) => ls,
                None => {
                    let ls = tempered_log_softmax(tape, view.logits, cfg.tau)?;
                    log_probs = Some(ls);
                    ls
                }
            };
            let t = if target.rows() == rows { target.values.clone() } else { target.values.slice_rows(0, rows) };
            let term = cross_entropy_sum(tape, ls, &t)?;
            unsup_sum += tape.value(term).item();
            n_u += rows;
            terms.push(term);
        }
    }

    let (mut sup_sum, mut n_l) = (0.0, 0);
    if let Some((logits, targets)) = labeled {
        if targets.rows() > 0 {
            if tape.value(logits).shape() != targets.values.shape() {
                return Err(ObjectiveError::Contract("labeled logits and targets differ in shape".into()));
            }
            let ls = tempered_log_softmax(tape, logits, cfg.tau)?;
            let term = cross_entropy_sum(tape, ls, &targets.values)?;
            sup_sum = tape.value(term).item();
            n_l = targets.rows();
            terms.push(term);
        }
    }
    if n_l + n_u == 0 {
        return Err(ObjectiveError::Contract("no loss terms".into()));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let total = tape.scale(total, 1.0 / (n_l + n_u) as f64)?;
    Ok(MultiviewLoss {
        total,
        sup: if n_l > 0 { sup_sum / n_l as f64 } else { 0.0 },
        unsup: if n_u > 0 { unsup_sum / n_u as f64 } else { 0.0 },
        n_labeled_terms: n_l,
        n_unlabeled_terms: n_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(tape: &mut Tape, rows: Vec<Vec<f64>>) -> Var {
        tape.leaf(Tensor::from_rows(&rows).unwrap())
    }

    fn targets(rows: Vec<Vec<f64>>) -> TargetBatch {
        let n = rows.len();
        TargetBatch::new(Tensor::from_rows(&rows).unwrap(), vec![TargetOrigin::Pseudo; n]).unwrap()
    }

    #[test]
    fn uniform_everything_gives_ln_c() {
        for tau in [0.05, 0.1, 1.0, 3.0] {
            let mut tape = Tape::new();
            let l = logits(&mut tape, vec![vec![0.3; 5]; 3]);
            let loss = soft_cross_entropy(&mut tape, l, &targets(vec![vec![0.2; 5]; 3]), tau).unwrap();
            assert!((tape.value(loss).item() - 5f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_oracle_value() {
        // −log(e²/(e²+1)) = ln(1 + e⁻²)
        let expected = (1.0 + (-2f64).exp()).ln();
        assert!((expected - 0.126928).abs() < 1e-6);
        let mut tape = Tape::new();
        let l = logits(&mut tape, vec![vec![2.0, 0.0]]);
        let loss = soft_cross_entropy(&mut tape, l, &targets(vec![vec![1.0, 0.0]]), 1.0).unwrap();
        assert!((tape.value(loss).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn one_hot_loss_grows_without_bound() {
        let mut prev = 0.0;
        for gap in [1.0, 10.0, 100.0, 500.0] {
            let mut tape = Tape::new();
            let l = logits(&mut tape, vec![vec![-gap, 0.0]]);
            let loss = soft_cross_entropy(&mut tape, l, &targets(vec![vec![1.0, 0.0]]), 1.0).unwrap();
            let v = tape.value(loss).item();
            assert!(v.is_finite() && v > prev);
            prev = v;
        }
        assert!(prev >= 500.0);
    }

    #[test]
    fn non_stochastic_targets_rejected() {
        let bad = TargetBatch::new(Tensor::from_rows(&[vec![0.5, 0.6]]).unwrap(), vec![TargetOrigin::Pseudo]);
        assert!(matches!(bad, Err(ObjectiveError::Contract(_))));
    }

    #[test]
    fn smoothing_convention() {
        let oh = Tensor::from_rows(&[vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(smooth_labels(&oh, 0.0).unwrap().values(), &oh);
        let s = smooth_labels(&oh, 0.01).unwrap();
        let row = s.values().row(0);
        assert!((row[1] - 0.991).abs() < 1e-15);
        assert!(row.iter().enumerate().filter(|(k, _)| *k != 1).all(|(_, &v)| (v - 0.001).abs() < 1e-15));
        for f in [0.0, 0.1, 0.3, 0.49] {
            let s = smooth_labels(&oh, f).unwrap();
            assert!((s.values().row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(smooth_labels(&Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(), 0.1).is_err());
    }

    #[test]
    fn build_targets_sources() {
        let cfg = LossConfig::default();
        let a = [0.7, 0.2, 0.1];
        let all_labeled = build_targets(&[Some(0), Some(2)], &[None, None], 3, &cfg).unwrap();
        assert_eq!(all_labeled, smooth_class_labels(&[0, 2], 3, 0.01).unwrap());
        let all_pseudo = build_targets(&[None], &[Some(&a[..])], 3, &cfg).unwrap();
        assert_eq!(all_pseudo.values().data(), &a);
        let mixed = build_targets(&[None, Some(1), None], &[Some(&a[..]), None, Some(&[0.0, 0.0, 1.0][..])], 3, &cfg).unwrap();
        assert_eq!(mixed.origin(), &[TargetOrigin::Pseudo, TargetOrigin::Label, TargetOrigin::Pseudo]);
        assert_eq!(mixed.values().row(0), &a);
        assert_eq!(mixed.values().row(2), &[0.0, 0.0, 1.0]);
        assert!(build_targets(&[Some(1)], &[Some(&a[..])], 3, &cfg).is_err());
        assert!(build_targets(&[None], &[None], 3, &cfg).is_err());
    }

    #[test]
    fn two_identical_globals_collapse_to_single_ce() {
        let rows = vec![vec![0.4, -0.1, 0.2], vec![0.0, 0.9, -0.3]];
        let t = targets(vec![vec![0.6, 0.3, 0.1], vec![0.1, 0.1, 0.8]]);
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let a = logits(&mut tape, rows.clone());
        let b = logits(&mut tape, rows.clone());
        let views = vec![
            ViewInput { logits: a, kind: ViewKind::Global, target: Some(t.clone()) },
            ViewInput { logits: b, kind: ViewKind::Global, target: Some(t.clone()) },
        ];
        let l = multiview_loss(&mut tape, &views, None, &cfg).unwrap();
        let c = logits(&mut tape, rows);
        let plain = soft_cross_entropy(&mut tape, c, &t, cfg.tau).unwrap();
        assert!((tape.value(l.total).item() - tape.value(plain).item()).abs() < 1e-14);
        assert_eq!(l.n_unlabeled_terms, 4);
    }

    #[test]
    fn no_unlabeled_terms_means_supervised_loss() {
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let l = logits(&mut tape, vec![vec![0.4, -0.1], vec![0.0, 0.9]]);
        let t = smooth_class_labels(&[0, 1], 2, 0.01).unwrap();
        let out = multiview_loss(&mut tape, &[], Some((l, &t)), &cfg).unwrap();
        let plain = soft_cross_entropy(&mut tape, l, &t, cfg.tau).unwrap();
        assert_eq!(tape.value(out.total).item(), tape.value(plain).item());
        assert_eq!(out.sup, tape.value(plain).item());
    }

    #[test]
    fn local_view_with_target_rejected() {
        let mut tape = Tape::new();
        let t = targets(vec![vec![0.5, 0.5]]);
        let a = logits(&mut tape, vec![vec![0.0, 1.0]]);
        let views = vec![
            ViewInput { logits: a, kind: ViewKind::Global, target: Some(t.clone()) },
            ViewInput { logits: a, kind: ViewKind::Global, target: Some(t.clone()) },
            ViewInput { logits: a, kind: ViewKind::Local, target: Some(t) },
        ];
        assert!(multiview_loss(&mut tape, &views, None, &LossConfig::default()).is_err());
    }

    #[test]
    fn targets_receive_no_gradient() {
        let mut tape = Tape::new();
        let l = logits(&mut tape, vec![vec![0.4, -0.1], vec![0.0, 0.9]]);
        let t = targets(vec![vec![0.3, 0.7], vec![0.5, 0.5]]);
        let loss = soft_cross_entropy(&mut tape, l, &t, 0.1).unwrap();
        let g = tape.backward(loss).unwrap();
        // only the logits leaf exists as a differentiable input
        assert!(g.get(l).is_some());
        assert_eq!(g.names().count(), 0);
    }
}
