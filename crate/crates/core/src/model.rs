//! Encoder = MLP backbone → two-layer projector (batchnorm on the hidden
//! layer) → L2 normalization → bias-free prototype layer, plus the EMA
//! teacher copy and three detached linear probes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcore::{sgd_step, GradError, Mode, ParamSet, Tape, Tensor, Var};

pub const PROTOTYPES: &str = "prototypes";
const BN_GAMMA: &str = "projector.bn.gamma";
const BN_BETA: &str = "projector.bn.beta";
const BN_MEAN: &str = "projector.bn.running_mean";
const BN_VAR: &str = "projector.bn.running_var";
/// EMA rate of the batchnorm running statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<(), GradError> {
        let dims = [self.input_dim, self.proj_hidden, self.proj_out, self.num_classes];
        if dims.iter().chain(&self.hidden_dims).any(|&d| d == 0) {
            return Err(GradError::Contract(format!("all layer widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn backbone_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    pub fn depth_dim(&self, depth: Depth) -> usize {
        match depth {
            Depth::Backbone => self.backbone_dim(),
            Depth::Proj1 => self.proj_hidden,
            Depth::Proj2 => self.proj_out,
        }
    }
}

/// Where a probe head or an embedding export taps the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Depth {
    /// Backbone output.
    Backbone,
    /// Projector hidden layer, after batchnorm and relu.
    Proj1,
    /// L2-normalized projector output.
    Proj2,
}

impl Depth {
    pub const ALL: [Depth; 3] = [Depth::Backbone, Depth::Proj1, Depth::Proj2];

    pub fn as_str(self) -> &'static str {
        match self {
            Depth::Backbone => "backbone",
            Depth::Proj1 => "proj1",
            Depth::Proj2 => "proj2",
        }
    }

    pub fn parse(s: &str) -> Option<Depth> {
        Depth::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

/// Student (or teacher) parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub arch: Architecture,
    /// Backbone, projector and prototypes.
    pub params: ParamSet,
    /// Batchnorm running statistics.
    pub buffers: BTreeMap<String, Tensor>,
    /// Detached linear classifiers, one per [`Depth`].
    pub probes: ParamSet,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn normalized_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = uniform(rng, &[rows, cols], 1.0);
    normalize_rows_in_place(&mut t);
    t
}

fn normalize_rows_in_place(t: &mut Tensor) {
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

fn layer_name(prefix: &str, what: &str) -> String {
    format!("{prefix}.{what}")
}

fn backbone_prefix(i: usize) -> String {
    format!("backbone.{i}")
}

fn probe_prefix(depth: Depth) -> String {
    format!("probe.{}", depth.as_str())
}

/// Fan-in scaled uniform initialization, deterministic under `seed`.
pub fn init_encoder(arch: &Architecture, seed: u64) -> Result<EncoderParams, GradError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let linear = |params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, fan_in: usize, fan_out: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        params.insert(&layer_name(prefix, "weight"), uniform(rng, &[fan_in, fan_out], bound))?;
        params.insert(&layer_name(prefix, "bias"), uniform(rng, &[fan_out], bound))
    };
    let mut width = arch.input_dim;
    for (i, &h) in arch.hidden_dims.iter().enumerate() {
        linear(&mut params, &mut rng, &backbone_prefix(i), width, h)?;
        width = h;
    }
    linear(&mut params, &mut rng, "projector.0", width, arch.proj_hidden)?;
    params.insert(BN_GAMMA, Tensor::filled(&[arch.proj_hidden], 1.0))?;
    params.insert(BN_BETA, Tensor::zeros(&[arch.proj_hidden]))?;
    linear(&mut params, &mut rng, "projector.1", arch.proj_hidden, arch.proj_out)?;
    params.insert(PROTOTYPES, normalized_rows(&mut rng, arch.num_classes, arch.proj_out))?;

    let mut buffers = BTreeMap::new();
    buffers.insert(BN_MEAN.to_string(), Tensor::zeros(&[arch.proj_hidden]));
    buffers.insert(BN_VAR.to_string(), Tensor::filled(&[arch.proj_hidden], 1.0));

    let mut probes = ParamSet::new();
    for depth in Depth::ALL {
        let prefix = probe_prefix(depth);
        probes.insert(&layer_name(&prefix, "weight"), Tensor::zeros(&[arch.depth_dim(depth), arch.num_classes]))?;
        probes.insert(&layer_name(&prefix, "bias"), Tensor::zeros(&[arch.num_classes]))?;
    }
    Ok(EncoderParams { arch: arch.clone(), params, buffers, probes })
}

/// Tape handles for one encoder forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    pub backbone_feat: Var,
    pub proj1_feat: Var,
    /// L2-normalized projector output.
    pub embedding: Var,
    /// Cosine similarities between embeddings and prototypes.
    pub logits: Var,
    /// Train-mode batchnorm mean and variance of this pass.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl ForwardOutputs {
    pub fn at_depth(&self, depth: Depth) -> Var {
        match depth {
            Depth::Backbone => self.backbone_feat,
            Depth::Proj1 => self.proj1_feat,
            Depth::Proj2 => self.embedding,
        }
    }
}

/// Runs the encoder on `input` (`B × input_dim`). With `trainable` the
/// parameters become named tape leaves; otherwise constants.
pub fn encoder_forward(
    params: &EncoderParams,
    tape: &mut Tape,
    input: Var,
    mode: Mode,
    trainable: bool,
) -> Result<ForwardOutputs, GradError> {
    let width = tape.value(input).cols();
    if tape.value(input).shape().len() != 2 || width != params.arch.input_dim {
        return Err(GradError::Dimension(format!(
            "encoder expects {} input features, got shape {:?}",
            params.arch.input_dim,
            tape.value(input).shape()
        )));
    }
    let bind = |tape: &mut Tape, name: &str| {
        if trainable {
            params.params.bind(tape, name)
        } else {
            params.params.bind_frozen(tape, name)
        }
    };
    let mut h = input;
    for i in 0..params.arch.hidden_dims.len() {
        let p = backbone_prefix(i);
        let w = bind(tape, &layer_name(&p, "weight"))?;
        let b = bind(tape, &layer_name(&p, "bias"))?;
        let z = tape.matmul(h, w)?;
        let z = tape.add(z, b)?;
        h = tape.relu(z)?;
    }
    let backbone_feat = h;

    let w0 = bind(tape, "projector.0.weight")?;
    let b0 = bind(tape, "projector.0.bias")?;
    let z = tape.matmul(backbone_feat, w0)?;
    let z = tape.add(z, b0)?;
    let gamma = bind(tape, BN_GAMMA)?;
    let beta = bind(tape, BN_BETA)?;
    let (z, batch_stats) = match mode {
        Mode::Train => {
            let out = tape.batchnorm_train(z, gamma, beta)?;
            let stats = tape.batch_stats(out).map(|(m, v)| (m.to_vec(), v.to_vec()));
            (out, stats)
        }
        Mode::Eval => {
            let out = tape.batchnorm_eval(z, gamma, beta, params.buffers[BN_MEAN].data(), params.buffers[BN_VAR].data())?;
            (out, None)
        }
    };
    let proj1_feat = tape.relu(z)?;
    let w1 = bind(tape, "projector.1.weight")?;
    let b1 = bind(tape, "projector.1.bias")?;
    let z = tape.matmul(proj1_feat, w1)?;
    let z = tape.add(z, b1)?;
    let embedding = tape.l2_normalize_rows(z)?;
    let protos = bind(tape, PROTOTYPES)?;
    let protos = tape.l2_normalize_rows(protos)?;
    let logits = tape.matmul_bt(embedding, protos)?;
    Ok(ForwardOutputs { backbone_feat, proj1_feat, embedding, logits, batch_stats })
}

/// Detached values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardValues {
    pub backbone_feat: Tensor,
    pub proj1_feat: Tensor,
    pub embedding: Tensor,
    pub logits: Tensor,
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl ForwardValues {
    pub fn at_depth(&self, depth: Depth) -> &Tensor {
        match depth {
            Depth::Backbone => &self.backbone_feat,
            Depth::Proj1 => &self.proj1_feat,
            Depth::Proj2 => &self.embedding,
        }
    }
}

/// Gradient-free forward pass.
pub fn encode(params: &EncoderParams, input: &Tensor, mode: Mode) -> Result<ForwardValues, GradError> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let out = encoder_forward(params, &mut tape, x, mode, false)?;
    Ok(ForwardValues {
        backbone_feat: tape.value(out.backbone_feat).clone(),
        proj1_feat: tape.value(out.proj1_feat).clone(),
        embedding: tape.value(out.embedding).clone(),
        logits: tape.value(out.logits).clone(),
        batch_stats: out.batch_stats,
    })
}

impl EncoderParams {
    /// Folds one train-mode batch into the batchnorm running statistics.
    pub fn update_running_stats(&mut self, mean: &[f64], var: &[f64], batch_size: usize) {
        let unbias = if batch_size > 1 { batch_size as f64 / (batch_size as f64 - 1.0) } else { 1.0 };
        let rm = self.buffers.get_mut(BN_MEAN).expect("running mean buffer");
        for (r, m) in rm.data_mut().iter_mut().zip(mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        let rv = self.buffers.get_mut(BN_VAR).expect("running var buffer");
        for (r, v) in rv.data_mut().iter_mut().zip(var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * unbias;
        }
    }

    /// Rescales every prototype row to unit norm.
    pub fn renormalize_prototypes(&mut self) {
        let p = self.params.value_mut(PROTOTYPES).expect("prototype parameter");
        normalize_rows_in_place(p);
    }

    pub fn prototypes(&self) -> &Tensor {
        self.params.get(PROTOTYPES).expect("prototype parameter")
    }

    /// Optimizer step on the encoder parameters followed by prototype renormalization.
    pub fn step(&mut self, lr: f64, momentum: f64, weight_decay: f64) -> Result<(), GradError> {
        sgd_step(&mut self.params, lr, momentum, weight_decay)?;
        self.renormalize_prototypes();
        Ok(())
    }
}

/// Redraws the prototype matrix (unit rows); everything else is untouched.
pub fn reinit_prototypes(params: &mut EncoderParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, d) = (params.arch.num_classes, params.arch.proj_out);
    let p = params.params.param_mut(PROTOTYPES).expect("prototype parameter");
    p.value = normalized_rows(&mut rng, c, d);
    p.momentum = Tensor::zeros(&[c, d]);
    p.grad = None;
}

/// Momentum encoder: an EMA copy of the student that never receives gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherState {
    pub params: EncoderParams,
    pub eta: f64,
}

impl TeacherState {
    pub fn from_student(student: &EncoderParams, eta: f64) -> Self {
        let mut params = student.clone();
        for (_, p) in params.params.iter_mut() {
            p.grad = None;
            p.momentum = Tensor::zeros(p.value.shape());
        }
        Self { params, eta }
    }
}

/// `φ ← ηφ + (1−η)θ` for every parameter and batchnorm buffer.
pub fn ema_update(teacher: &mut TeacherState, student: &EncoderParams) -> Result<(), GradError> {
    teacher.params.params.check_same_layout(&student.params)?;
    let eta = teacher.eta;
    let blend = |phi: &mut [f64], theta: &[f64]| {
        for (p, t) in phi.iter_mut().zip(theta) {
            *p = eta * *p + (1.0 - eta) * t;
        }
    };
    for ((_, phi), (_, theta)) in teacher.params.params.iter_mut().zip(student.params.iter()) {
        blend(phi.value.data_mut(), theta.value.data());
    }
    for (name, phi) in teacher.params.buffers.iter_mut() {
        let theta = student
            .buffers
            .get(name)
            .filter(|t| t.shape() == phi.shape())
            .ok_or_else(|| GradError::Dimension(format!("student lacks buffer {name}")))?;
        blend(phi.data_mut(), theta.data());
    }
    Ok(())
}

/// Linear probe logits on detached `features` taken at `depth`.
pub fn probe_forward(params: &EncoderParams, tape: &mut Tape, features: &Tensor, depth: Depth) -> Result<Var, GradError> {
    let want = params.arch.depth_dim(depth);
    if features.cols() != want {
        return Err(GradError::Dimension(format!("{} probe expects {want} features, got {}", depth.as_str(), features.cols())));
    }
    let x = tape.constant(features.clone());
    let prefix = probe_prefix(depth);
    let w = params.probes.bind(tape, &layer_name(&prefix, "weight"))?;
    let b = params.probes.bind(tape, &layer_name(&prefix, "bias"))?;
    let z = tape.matmul(x, w)?;
    tape.add(z, b)
}

/// One SGD step of all three probes on a labeled batch of detached features.
/// Returns the per-depth accuracy measured before the update.
pub fn probe_step(
    params: &mut EncoderParams,
    features: &[(Depth, &Tensor)],
    labels: &[usize],
    lr: f64,
    momentum: f64,
) -> Result<BTreeMap<Depth, f64>, GradError> {
    let mut tape = Tape::new();
    let mut total = None;
    let mut acc = BTreeMap::new();
    let n = labels.len();
    for &(depth, feats) in features {
        let logits = probe_forward(params, &mut tape, feats, depth)?;
        let hits = tape.value(logits).argmax_rows().iter().zip(labels).filter(|(p, y)| p == y).count();
        acc.insert(depth, hits as f64 / n as f64);
        let ls = tape.log_softmax_rows(logits)?;
        let onehot = tape.constant(one_hot(labels, params.arch.num_classes));
        let picked = tape.mul(ls, onehot)?;
        let s = tape.sum(picked)?;
        let loss = tape.scale(s, -1.0 / n as f64)?;
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    let Some(total) = total else { return Ok(acc) };
    let grads = tape.backward(total)?;
    params.probes.absorb(&grads)?;
    // probes at depths not present this step still need a (zero) gradient
    for (_, p) in params.probes.iter_mut() {
        if p.grad.is_none() {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }
    sgd_step(&mut params.probes, lr, momentum, 0.0)?;
    Ok(acc)
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        t.set(i, y, 1.0);
    }
    t
}
