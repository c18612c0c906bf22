//! Soft pseudo-labels from detached logits.
//!
//! Two clustering functions are provided: an entropic optimal-transport
//! assignment solved with Sinkhorn-Knopp over the batch (plus an optional
//! queue of past logits), and a center-then-sharpen softmax against an
//! EMA estimate of the mean logit.

mod center;
mod queue;
mod sinkhorn;

pub use center::{center_sharpen_assign, update_center, CenterState};
pub use queue::LogitQueue;
pub use sinkhorn::{
    sinkhorn_assign, sinkhorn_assign_with, transport_plan, SinkhornConfig, SinkhornStop, TransportPlan,
    CONVERGENCE_MAX_ITERATIONS, CONVERGENCE_TOLERANCE,
};

use thiserror::Error;

use crate::gradcore::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignError {
    #[error("empty logit batch")]
    EmptyBatch,
    #[error("logit batch contains non-finite values")]
    NonFinite,
    #[error("expected {expected} prototypes per row, got {got}")]
    Width { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Detached `B × C` logits (samples × prototypes).
#[derive(Clone, Debug, PartialEq)]
pub struct LogitBatch(Tensor);

impl LogitBatch {
    pub fn new(values: Tensor) -> Result<Self, AssignError> {
        if values.shape().len() != 2 {
            return Err(AssignError::Config(format!("logits must be a matrix, got {:?}", values.shape())));
        }
        if values.rows() == 0 {
            return Err(AssignError::EmptyBatch);
        }
        if !values.is_finite() {
            return Err(AssignError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignError> {
        let t = Tensor::from_rows(rows).map_err(|e| AssignError::Config(e.to_string()))?;
        Self::new(t)
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn batch_size(&self) -> usize {
        self.0.rows()
    }

    pub fn num_prototypes(&self) -> usize {
        self.0.cols()
    }
}

/// Row-stochastic `B × C` soft assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment(Tensor);

impl Assignment {
    /// Wraps rows that are already probability distributions.
    pub fn new(values: Tensor) -> Result<Self, AssignError> {
        for i in 0..values.rows() {
            let row = values.row(i);
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) {
                return Err(AssignError::Config(format!("row {i} is not a distribution (sum {s})")));
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    /// Column mean over the batch: the average assignment.
    pub fn mean_distribution(&self) -> Vec<f64> {
        self.0.column_means()
    }

    /// Entropy (nats) of the batch-mean assignment.
    pub fn mean_entropy(&self) -> f64 {
        entropy(&self.mean_distribution())
    }
}

/// Shannon entropy in nats; zero entries contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}
