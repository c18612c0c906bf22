use super::{AssignError, Assignment, LogitBatch, LogitQueue};
use crate::gradcore::Tensor;

/// Marginal residual at which convergence mode stops.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;
/// Iteration cap for convergence mode.
pub const CONVERGENCE_MAX_ITERATIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornConfig {
    /// Target temperature; smaller values give sharper assignments.
    pub epsilon: f64,
    /// Normalization rounds in the default fixed-iteration mode.
    pub iterations: usize,
    /// Past logit rows kept as extra transport context (0 disables).
    pub queue_capacity: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, iterations: 3, queue_capacity: 0 }
    }
}

impl SinkhornConfig {
    pub fn validate(&self, unlabeled_batch: usize) -> Result<(), AssignError> {
        if !(self.epsilon > 0.0) {
            return Err(AssignError::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.iterations == 0 {
            return Err(AssignError::Config("sinkhorn iterations must be >= 1".into()));
        }
        if self.queue_capacity > 0 && (unlabeled_batch == 0 || self.queue_capacity % unlabeled_batch != 0) {
            return Err(AssignError::Config(format!(
                "queue capacity {} must be a multiple of the unlabeled batch size {unlabeled_batch}",
                self.queue_capacity
            )));
        }
        Ok(())
    }
}

/// When to stop alternating the marginal normalizations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SinkhornStop {
    Iterations(usize),
    /// Until the column-marginal residual drops below `tolerance`.
    Converge {
        tolerance: f64,
        max_iterations: usize,
    },
}

impl SinkhornStop {
    pub fn converge() -> Self {
        SinkhornStop::Converge { tolerance: CONVERGENCE_TOLERANCE, max_iterations: CONVERGENCE_MAX_ITERATIONS }
    }
}

/// The `C × N` transport plan over prototypes × context samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub values: Tensor,
    pub iterations: usize,
    /// Largest absolute deviation of a column sum from `1/N`.
    pub residual: f64,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.values.rows()).map(|k| self.values.row(k).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let (c, n) = (self.values.rows(), self.values.cols());
        let mut out = vec![0.0; n];
        for k in 0..c {
            out.iter_mut().zip(self.values.row(k)).for_each(|(o, v)| *o += v);
        }
        out
    }
}

/// Solves the entropic transport problem between uniform prototype and
/// sample marginals for `context` (`N × C` logit rows).
///
/// Each round scales columns to `1/N` and then rows to `1/C`.
pub fn transport_plan(context: &Tensor, epsilon: f64, stop: SinkhornStop) -> Result<TransportPlan, AssignError> {
    let (n, c) = (context.rows(), context.cols());
    if n == 0 {
        return Err(AssignError::EmptyBatch);
    }
    if !(epsilon > 0.0) {
        return Err(AssignError::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !context.is_finite() {
        return Err(AssignError::NonFinite);
    }
    // q[k*n + j]: prototype k, sample j. Each sample is shifted by its max
    // logit before exponentiation; column scaling absorbs the shift.
    let mut q = vec![0.0; c * n];
    for j in 0..n {
        let row = context.row(j);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (k, &v) in row.iter().enumerate() {
            q[k * n + j] = ((v - m) / epsilon).exp();
        }
    }
    let (col_target, row_target) = (1.0 / n as f64, 1.0 / c as f64);
    let mut col = vec![0.0; n];
    let (max_rounds, tolerance) = match stop {
        SinkhornStop::Iterations(it) => (it, None),
        SinkhornStop::Converge { tolerance, max_iterations } => (max_iterations, Some(tolerance)),
    };
    let mut rounds = 0;
    let mut residual = f64::INFINITY;
    while rounds < max_rounds {
        rounds += 1;
        column_sums(&q, c, n, &mut col);
        for k in 0..c {
            for (v, s) in q[k * n..(k + 1) * n].iter_mut().zip(&col) {
                if *s > 0.0 {
                    *v *= col_target / s;
                }
            }
        }
        for k in 0..c {
            let r = &mut q[k * n..(k + 1) * n];
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                let f = row_target / s;
                r.iter_mut().for_each(|v| *v *= f);
            }
        }
        column_sums(&q, c, n, &mut col);
        residual = col.iter().map(|s| (s - col_target).abs()).fold(0.0, f64::max);
        if tolerance.is_some_and(|t| residual < t) {
            break;
        }
    }
    Ok(TransportPlan { values: Tensor::matrix(c, n, q), iterations: rounds, residual })
}

fn column_sums(q: &[f64], c: usize, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..c {
        out.iter_mut().zip(&q[k * n..(k + 1) * n]).for_each(|(o, v)| *o += v);
    }
}

/// Sinkhorn-Knopp pseudo-labels for `logits` with the configured number of
/// rounds. Queue rows join the transport problem as extra context; only the
/// batch rows are returned. The batch is pushed onto the queue afterwards.
pub fn sinkhorn_assign(logits: &LogitBatch, queue: &mut LogitQueue, cfg: &SinkhornConfig) -> Result<Assignment, AssignError> {
    sinkhorn_assign_with(logits, queue, cfg.epsilon, SinkhornStop::Iterations(cfg.iterations)).map(|(a, _)| a)
}

/// As [`sinkhorn_assign`], with an explicit stopping rule; also returns the plan.
pub fn sinkhorn_assign_with(
    logits: &LogitBatch,
    queue: &mut LogitQueue,
    epsilon: f64,
    stop: SinkhornStop,
) -> Result<(Assignment, TransportPlan), AssignError> {
    let (b, c) = (logits.batch_size(), logits.num_prototypes());
    if queue.width() != c {
        return Err(AssignError::Width { expected: queue.width(), got: c });
    }
    let q_rows = queue.len();
    let context = if q_rows == 0 {
        logits.values().clone()
    } else {
        Tensor::concat_rows(&[&queue.to_tensor(), logits.values()]).map_err(|e| AssignError::Config(e.to_string()))?
    };
    let plan = transport_plan(&context, epsilon, stop)?;
    let n = q_rows + b;
    let mut out = vec![0.0; b * c];
    for i in 0..b {
        let j = q_rows + i;
        let s: f64 = (0..c).map(|k| plan.values.data()[k * n + j]).sum();
        for k in 0..c {
            out[i * c + k] = if s > 0.0 { plan.values.data()[k * n + j] / s } else { 1.0 / c as f64 };
        }
    }
    queue.push(logits)?;
    Ok((Assignment(Tensor::matrix(b, c, out)), plan))
}
