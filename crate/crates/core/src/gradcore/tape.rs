use std::collections::HashMap;

use super::tensor::{gemm_strided, Tensor};
use super::GradError;

/// Variance floor inside batch normalization.
pub const BN_EPS: f64 = 1e-8;
/// Norm floor inside row L2 normalization.
pub const L2_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// The differentiable operations understood by [`Tape::forward_op`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `a · b`
    Matmul,
    /// `a · bᵀ`
    MatmulBt,
    /// Elementwise sum; `b` may also be a single row broadcast over `a`.
    Add,
    /// Elementwise product of equal shapes.
    Mul,
    Relu,
    /// Inputs `[x, gamma, beta]`, plus `[running_mean, running_var]` in eval mode.
    BatchNorm,
    L2NormalizeRows,
    LogSoftmaxRows,
    Scale(f64),
    ConcatRows,
    SliceRows {
        start: usize,
        end: usize,
    },
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    MatmulBt { a: Var, b: Var },
    Add { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var },
    Relu { x: Var },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64> },
    BatchNormEval { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    LogSoftmaxRows { x: Var },
    Scale { x: Var, factor: f64 },
    ConcatRows { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    Sum { x: Var },
    Mean { x: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::MatmulBt { .. } => "matmul_bt",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Relu { .. } => "relu",
            Op::BatchNormTrain { .. } | Op::BatchNormEval { .. } => "batchnorm",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
            Op::LogSoftmaxRows { .. } => "log_softmax_rows",
            Op::Scale { .. } => "scale",
            Op::ConcatRows { .. } => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    name: Option<String>,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_var: HashMap<usize, Tensor>,
    by_name: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(&v.0)
    }

    pub fn named(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }
}

/// Records executed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node list is always a
/// topological order of the graph. Values that do not depend on any
/// `requires_grad` leaf are kept (they are needed as operands) but are
/// skipped by the backward sweep.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that rejects non-finite op outputs in debug builds.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), check_finite: cfg!(debug_assertions) }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, None, Op::Leaf)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, None, Op::Leaf)
    }

    /// Differentiable input whose gradient is also reported under `name`.
    pub fn named_leaf(&mut self, name: &str, value: Tensor) -> Var {
        self.push(value, true, Some(name.to_string()), Op::Leaf)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, name: Option<String>, op: Op) -> Var {
        self.nodes.push(Node { value, requires_grad, name, op });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, parents: &[Var], op: Op) -> Result<Var, GradError> {
        if self.check_finite && !value.is_finite() {
            return Err(GradError::NonFinite(op.name()));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, requires_grad, None, op))
    }

    /// Batch mean and (biased) variance of a train-mode batchnorm output.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNormTrain { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// Generic dispatch over [`OpKind`].
    pub fn forward_op(&mut self, kind: &OpKind, inputs: &[Var], mode: Mode) -> Result<Var, GradError> {
        let arity = |n: usize| -> Result<(), GradError> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(GradError::Contract(format!("{kind:?} takes {n} inputs, got {}", inputs.len())))
            }
        };
        match kind {
            OpKind::Matmul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::MatmulBt => {
                arity(2)?;
                self.matmul_bt(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            OpKind::BatchNorm => match mode {
                Mode::Train => {
                    if inputs.len() != 3 && inputs.len() != 5 {
                        return Err(GradError::Contract("batchnorm takes 3 or 5 inputs".into()));
                    }
                    self.batchnorm_train(inputs[0], inputs[1], inputs[2])
                }
                Mode::Eval => {
                    arity(5)?;
                    let rm = self.value(inputs[3]).data().to_vec();
                    let rv = self.value(inputs[4]).data().to_vec();
                    self.batchnorm_eval(inputs[0], inputs[1], inputs[2], &rm, &rv)
                }
            },
            OpKind::L2NormalizeRows => {
                arity(1)?;
                self.l2_normalize_rows(inputs[0])
            }
            OpKind::LogSoftmaxRows => {
                arity(1)?;
                self.log_softmax_rows(inputs[0])
            }
            OpKind::Scale(f) => {
                arity(1)?;
                self.scale(inputs[0], *f)
            }
            OpKind::ConcatRows => self.concat_rows(inputs),
            OpKind::SliceRows { start, end } => {
                arity(1)?;
                self.slice_rows(inputs[0], *start, *end)
            }
            OpKind::Sum => {
                arity(1)?;
                self.sum(inputs[0])
            }
            OpKind::Mean => {
                arity(1)?;
                self.mean(inputs[0])
            }
        }
    }

    fn matrix_dims(&self, v: Var, op: &str) -> Result<(usize, usize), GradError> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(GradError::Dimension(format!("{op}: expected a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(GradError::Dimension(format!("matmul: {m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_strided(m, k, n, self.value(a).data(), (k as isize, 1), self.value(b).data(), (n as isize, 1), &mut out, 0.0);
        self.record(Tensor::matrix(m, n, out), &[a, b], Op::Matmul { a, b })
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (m, k) = self.matrix_dims(a, "matmul_bt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_bt")?;
        if k != k2 {
            return Err(GradError::Dimension(format!("matmul_bt: {m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_strided(m, k, n, self.value(a).data(), (k as isize, 1), self.value(b).data(), (1, k as isize), &mut out, 0.0);
        self.record(Tensor::matrix(m, n, out), &[a, b], Op::MatmulBt { a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            let out = Tensor::new(ta.shape().to_vec(), data)?;
            return self.record(out, &[a, b], Op::Add { a, b, broadcast: false });
        }
        let cols = ta.cols();
        if ta.shape().len() == 2 && tb.len() == cols && tb.rows() == 1 {
            let mut data = ta.data().to_vec();
            for row in data.chunks_mut(cols) {
                for (x, y) in row.iter_mut().zip(tb.data()) {
                    *x += y;
                }
            }
            let out = Tensor::new(ta.shape().to_vec(), data)?;
            return self.record(out, &[a, b], Op::Add { a, b, broadcast: true });
        }
        Err(GradError::Dimension(format!("add: {:?} + {:?}", ta.shape(), tb.shape())))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(GradError::Dimension(format!("mul: {:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.record(out, &[a, b], Op::Mul { a, b })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, GradError> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.record(out, &[x], Op::Relu { x })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, GradError> {
        let out = self.value(x).map(|v| v * factor);
        self.record(out, &[x], Op::Scale { x, factor })
    }

    /// Train-mode batch normalization with per-feature affine `gamma`, `beta`.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, GradError> {
        let (n, c) = self.matrix_dims(x, "batchnorm")?;
        if n < 2 {
            return Err(GradError::DegenerateBatch(n));
        }
        self.check_affine(gamma, beta, c)?;
        let xs = self.value(x);
        let mean = xs.column_means();
        let mut var = vec![0.0; c];
        for row in xs.data().chunks(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (xhat, out) = self.normalize_affine(x, gamma, beta, &mean, &inv_std);
        self.record(out, &[x, gamma, beta], Op::BatchNormTrain { x, gamma, beta, xhat, inv_std, mean, var })
    }

    /// Eval-mode batch normalization against fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var, GradError> {
        let (_, c) = self.matrix_dims(x, "batchnorm")?;
        self.check_affine(gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(GradError::Dimension(format!("batchnorm: running stats width vs {c}")));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (xhat, out) = self.normalize_affine(x, gamma, beta, running_mean, &inv_std);
        self.record(out, &[x, gamma, beta], Op::BatchNormEval { x, gamma, beta, xhat, inv_std })
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<(), GradError> {
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(GradError::Dimension(format!("batchnorm: affine params must have width {c}")));
        }
        Ok(())
    }

    fn normalize_affine(&self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64]) -> (Vec<f64>, Tensor) {
        let xs = self.value(x);
        let c = xs.cols();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xs.len());
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.data().chunks(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        (xhat, Tensor::matrix(xs.rows(), c, out))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, GradError> {
        let (r, c) = self.matrix_dims(x, "l2_normalize_rows")?;
        let xs = self.value(x);
        let mut norms = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xs.data().chunks(c.max(1)).take(r) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(L2_EPS);
            norms.push(n);
            out.extend(row.iter().map(|v| v / n));
        }
        self.record(Tensor::matrix(r, c, out), &[x], Op::L2NormalizeRows { x, norms })
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var, GradError> {
        let (r, c) = self.matrix_dims(x, "log_softmax_rows")?;
        let xs = self.value(x);
        let mut out = Vec::with_capacity(r * c);
        for row in xs.data().chunks(c.max(1)).take(r) {
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|v| v - lse));
        }
        self.record(Tensor::matrix(r, c, out), &[x], Op::LogSoftmaxRows { x })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        if parts.is_empty() {
            return Err(GradError::Contract("concat_rows of nothing".into()));
        }
        for &p in parts {
            self.matrix_dims(p, "concat_rows")?;
        }
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&vals)?;
        self.record(out, parts, Op::ConcatRows { parts: parts.to_vec() })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, GradError> {
        let (r, _) = self.matrix_dims(x, "slice_rows")?;
        if start > end || end > r {
            return Err(GradError::Dimension(format!("slice_rows: {start}..{end} of {r} rows")));
        }
        let out = self.value(x).slice_rows(start, end);
        self.record(out, &[x], Op::SliceRows { x, start })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, GradError> {
        let out = Tensor::scalar(self.value(x).sum());
        self.record(out, &[x], Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, GradError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(GradError::Dimension("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.record(out, &[x], Op::Mean { x })
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, GradError> {
        if !self.value(loss).is_scalar() {
            return Err(GradError::Contract(format!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape())));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            propagate(&nodes, i, &g, &mut grads);
        }

        let mut out = Gradients::default();
        for (i, node) in nodes.into_iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let g = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
            let t = Tensor::new(node.value.shape().to_vec(), g)?;
            if let Some(name) = node.name {
                out.by_name.insert(name, t.clone());
            }
            out.by_var.insert(i, t);
        }
        Ok(out)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(slot);
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        Op::Matmul { a, b } => {
            let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            let n = nodes[b.0].value.cols();
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            // dA = G · Bᵀ
            accumulate(grads, nodes, *a, |da| gemm_strided(m, n, k, g, (n as isize, 1), bv, (1, n as isize), da, 1.0));
            // dB = Aᵀ · G
            accumulate(grads, nodes, *b, |db| gemm_strided(k, m, n, av, (1, k as isize), g, (n as isize, 1), db, 1.0));
        }
        Op::MatmulBt { a, b } => {
            let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            let n = nodes[b.0].value.rows();
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            // dA = G · B
            accumulate(grads, nodes, *a, |da| gemm_strided(m, n, k, g, (n as isize, 1), bv, (k as isize, 1), da, 1.0));
            // dB = Gᵀ · A
            accumulate(grads, nodes, *b, |db| gemm_strided(n, m, k, g, (1, n as isize), av, (k as isize, 1), db, 1.0));
        }
        Op::Add { a, b, broadcast } => {
            accumulate(grads, nodes, *a, |da| da.iter_mut().zip(g).for_each(|(d, v)| *d += v));
            if *broadcast {
                let c = nodes[b.0].value.len();
                accumulate(grads, nodes, *b, |db| {
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                });
            } else {
                accumulate(grads, nodes, *b, |db| db.iter_mut().zip(g).for_each(|(d, v)| *d += v));
            }
        }
        Op::Mul { a, b } => {
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            accumulate(grads, nodes, *a, |da| {
                for ((d, gv), y) in da.iter_mut().zip(g).zip(bv) {
                    *d += gv * y;
                }
            });
            accumulate(grads, nodes, *b, |db| {
                for ((d, gv), x) in db.iter_mut().zip(g).zip(av) {
                    *d += gv * x;
                }
            });
        }
        Op::Relu { x } => {
            let xv = nodes[x.0].value.data();
            accumulate(grads, nodes, *x, |dx| {
                for ((d, gv), v) in dx.iter_mut().zip(g).zip(xv) {
                    if *v > 0.0 {
                        *d += gv;
                    }
                }
            });
        }
        Op::Scale { x, factor } => {
            accumulate(grads, nodes, *x, |dx| dx.iter_mut().zip(g).for_each(|(d, v)| *d += v * factor));
        }
        Op::BatchNormTrain { x, gamma, beta, xhat, inv_std, .. } => {
            let c = inv_std.len();
            let n = xhat.len() / c;
            let gam = nodes[gamma.0].value.data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                for j in 0..c {
                    sum_g[j] += grow[j];
                    sum_gx[j] += grow[j] * hrow[j];
                }
            }
            accumulate(grads, nodes, *gamma, |dg| dg.iter_mut().zip(&sum_gx).for_each(|(d, v)| *d += v));
            accumulate(grads, nodes, *beta, |db| db.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += v));
            accumulate(grads, nodes, *x, |dx| {
                let nf = n as f64;
                for ((drow, grow), hrow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        // dxhat = g·γ; dx = inv_std/n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                        let k = gam[j] * inv_std[j] / nf;
                        drow[j] += k * (nf * grow[j] - sum_g[j] - hrow[j] * sum_gx[j]);
                    }
                }
            });
        }
        Op::BatchNormEval { x, gamma, beta, xhat, inv_std } => {
            let c = inv_std.len();
            let gam = nodes[gamma.0].value.data();
            accumulate(grads, nodes, *gamma, |dg| {
                for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        dg[j] += grow[j] * hrow[j];
                    }
                }
            });
            accumulate(grads, nodes, *beta, |db| {
                for grow in g.chunks(c) {
                    db.iter_mut().zip(grow).for_each(|(d, v)| *d += v);
                }
            });
            accumulate(grads, nodes, *x, |dx| {
                for (drow, grow) in dx.chunks_mut(c).zip(g.chunks(c)) {
                    for j in 0..c {
                        drow[j] += grow[j] * gam[j] * inv_std[j];
                    }
                }
            });
        }
        Op::L2NormalizeRows { x, norms } => {
            let y = node.value.data();
            let c = node.value.cols();
            accumulate(grads, nodes, *x, |dx| {
                for (r, &n) in norms.iter().enumerate() {
                    let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let clamped = n <= L2_EPS;
                    for j in 0..c {
                        dx[r * c + j] += if clamped { gr[j] / n } else { (gr[j] - yr[j] * dot) / n };
                    }
                }
            });
        }
        Op::LogSoftmaxRows { x } => {
            let y = node.value.data();
            let c = node.value.cols();
            accumulate(grads, nodes, *x, |dx| {
                for ((drow, grow), yrow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                    let total: f64 = grow.iter().sum();
                    for j in 0..c {
                        drow[j] += grow[j] - yrow[j].exp() * total;
                    }
                }
            });
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.0].value.len();
                let slice = &g[offset..offset + len];
                accumulate(grads, nodes, *p, |dp| dp.iter_mut().zip(slice).for_each(|(d, v)| *d += v));
                offset += len;
            }
        }
        Op::SliceRows { x, start } => {
            let c = node.value.cols();
            accumulate(grads, nodes, *x, |dx| {
                dx[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(d, v)| *d += v);
            });
        }
        Op::Sum { x } => {
            accumulate(grads, nodes, *x, |dx| dx.iter_mut().for_each(|d| *d += g[0]));
        }
        Op::Mean { x } => {
            let n = nodes[x.0].value.len() as f64;
            accumulate(grads, nodes, *x, |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
        }
    }
}
