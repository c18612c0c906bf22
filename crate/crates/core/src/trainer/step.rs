use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, Method, MetricsRecord, TrainConfig, TrainError};
use crate::assign::{center_sharpen_assign, entropy, sinkhorn_assign, update_center, CenterState, LogitBatch, LogitQueue};
use crate::data::{augment_batch, augment_labeled, derive_seed, Dataset, MixPlan};
use crate::gradcore::{cosine_lr, sgd_step, Mode, Tape, Tensor};
use crate::model::{ema_update, encode, encoder_forward, init_encoder, probe_step, Depth, EncoderParams, TeacherState};
use crate::objective::{multiview_loss, smooth_class_labels, TargetBatch, ViewInput, ViewKind};

const MIX_STREAM: u64 = 0x6d;
const PROBE_MOMENTUM: f64 = 0.9;

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub student: EncoderParams,
    pub teacher: TeacherState,
    pub center: CenterState,
    /// One logit queue per global view.
    pub queues: Vec<LogitQueue>,
    /// Epoch of the next step.
    pub epoch: usize,
    /// Position of the next step inside its epoch.
    pub step_in_epoch: usize,
    /// Steps taken so far.
    pub global_step: usize,
}

impl TrainState {
    /// Fresh state with encoder weights drawn from `cfg.seed`.
    pub fn init(dataset: &Dataset, cfg: &TrainConfig) -> Result<Self, TrainError> {
        let arch = cfg.arch.resolve(dataset.dim(), dataset.class_count);
        let student = init_encoder(&arch, cfg.seed)?;
        Ok(Self::from_student(student, cfg))
    }

    pub fn from_student(student: EncoderParams, cfg: &TrainConfig) -> Self {
        let c = student.arch.num_classes;
        let teacher = TeacherState::from_student(&student, cfg.teacher_eta);
        let queues = (0..cfg.aug.global_views).map(|_| LogitQueue::new(cfg.sinkhorn.queue_capacity, c)).collect();
        Self {
            student,
            teacher,
            center: CenterState::zeros(c, cfg.center_mu),
            queues,
            epoch: 0,
            step_in_epoch: 0,
            global_step: 0,
        }
    }
}

/// Step budget for the learning-rate and temperature schedules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl Schedule {
    pub fn new(cfg: &TrainConfig, steps_per_epoch: usize) -> Self {
        Self {
            steps_per_epoch,
            total_steps: cfg.epochs * steps_per_epoch,
            warmup_steps: (cfg.warmup_epochs * steps_per_epoch).min(cfg.epochs * steps_per_epoch),
        }
    }

    pub fn lr(&self, cfg: &TrainConfig, step: usize) -> f64 {
        cosine_lr(step, self.warmup_steps, self.total_steps, cfg.base_lr, cfg.final_lr)
    }

    /// Daino sharpening temperature: linear ramp from start to end.
    pub fn teacher_eps(&self, cfg: &TrainConfig, step: usize) -> f64 {
        let ramp = cfg.teacher_eps_warmup * self.steps_per_epoch;
        if ramp == 0 || step >= ramp {
            return cfg.teacher_eps_end;
        }
        let t = step as f64 / ramp as f64;
        cfg.teacher_eps_start + (cfg.teacher_eps_end - cfg.teacher_eps_start) * t
    }
}

struct Piece {
    rows: usize,
    kind: Option<ViewKind>,
    target: Option<TargetBatch>,
}

fn concat(parts: &[Tensor]) -> Result<Tensor, TrainError> {
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(Tensor::concat_rows(&refs)?)
}

fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = logits.argmax_rows().iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// One optimization step: views, targets, mixing, loss, SGD, probes, EMA,
/// center update.
pub fn train_step(
    state: &mut TrainState,
    dataset: &Dataset,
    batch: &Batch,
    cfg: &TrainConfig,
    schedule: &Schedule,
) -> Result<MetricsRecord, TrainError> {
    let g = batch.global_step;
    let lr = schedule.lr(cfg, g);
    let c = dataset.class_count;
    let nu = batch.unlabeled.len();
    let nl = batch.labeled.len();
    let mut mix_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, MIX_STREAM, g as u64]));

    let mut inputs: Vec<Tensor> = Vec::new();
    let mut pieces: Vec<Piece> = Vec::new();
    let mut assign_entropy = f64::NAN;
    let mut teacher_logits = None;

    if nu > 0 {
        let views = augment_batch(dataset, &batch.unlabeled, &cfg.aug, cfg.seed, batch.epoch as u64);
        let globals = concat(&views.globals)?;
        let source = if cfg.uses_teacher_targets() { &state.teacher.params } else { &state.student };
        let tl = encode(source, &globals, Mode::Train)?.logits;
        if cfg.method == Method::Daino && g == 0 {
            // a zero center leaves the first sharpened batches lopsided
            state.center.gamma = tl.column_means();
        }
        let mut targets = Vec::with_capacity(views.globals.len());
        let mut ent = 0.0;
        for k in 0..views.globals.len() {
            let lb = LogitBatch::new(tl.slice_rows(k * nu, (k + 1) * nu))?;
            let a = match cfg.method {
                Method::Suave => sinkhorn_assign(&lb, &mut state.queues[k], &cfg.sinkhorn)?,
                Method::Daino => center_sharpen_assign(&lb, &state.center, schedule.teacher_eps(cfg, g))?,
            };
            ent += entropy(&a.mean_distribution());
            targets.push(TargetBatch::from_assignment(&a));
        }
        assign_entropy = ent / views.globals.len() as f64;
        // one plan for every global view keeps mixed rows paired across views
        let plan = MixPlan::draw(nu, dataset.dim(), &cfg.mix, &mut mix_rng)?;
        for (x, t) in views.globals.into_iter().zip(targets) {
            let (x, t) = match &plan {
                Some(p) => {
                    let (mx, mt) = p.apply(&x, &t)?;
                    (concat(&[x, mx])?, t.concat(&mt)?)
                }
                None => (x, t),
            };
            pieces.push(Piece { rows: x.rows(), kind: Some(ViewKind::Global), target: Some(t) });
            inputs.push(x);
        }
        for x in views.locals {
            pieces.push(Piece { rows: x.rows(), kind: Some(ViewKind::Local), target: None });
            inputs.push(x);
        }
        teacher_logits = Some(tl);
    }

    let labels: Vec<usize> = batch.labeled.iter().map(|&i| dataset.labels[i]).collect();
    let labeled_offset: usize = inputs.iter().map(Tensor::rows).sum();
    if nl > 0 {
        let x = augment_labeled(dataset, &batch.labeled, &cfg.aug, cfg.seed, batch.epoch as u64, g as u64);
        let t = smooth_class_labels(&labels, c, cfg.label_smoothing)?;
        let plan = MixPlan::draw(nl, dataset.dim(), &cfg.mix, &mut mix_rng)?;
        let (x, t) = match plan {
            Some(p) => {
                let (mx, mt) = p.apply(&x, &t)?;
                (concat(&[x, mx])?, t.concat(&mt)?)
            }
            None => (x, t),
        };
        pieces.push(Piece { rows: x.rows(), kind: None, target: Some(t) });
        inputs.push(x);
    }

    let all = concat(&inputs)?;
    let total_rows = all.rows();
    let mut tape = Tape::new();
    let x = tape.constant(all);
    let out = encoder_forward(&state.student, &mut tape, x, Mode::Train, true)?;

    let mut views = Vec::new();
    let mut labeled = None;
    let mut offset = 0;
    for p in pieces {
        let logits = tape.slice_rows(out.logits, offset, offset + p.rows)?;
        offset += p.rows;
        match p.kind {
            Some(kind) => views.push(ViewInput { logits, kind, target: p.target }),
            None => labeled = Some((logits, p.target.expect("labeled target"))),
        }
    }
    let loss = multiview_loss(&mut tape, &views, labeled.as_ref().map(|(l, t)| (*l, t)), &cfg.loss_config())?;
    let loss_total = tape.value(loss.total).item();
    if !loss_total.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            epoch: batch.epoch,
            step: g,
            unlabeled: batch.unlabeled.clone(),
            labeled: batch.labeled.clone(),
        });
    }

    let labeled_feats = (nl > 0).then(|| {
        let grab = |v| tape.value(v).slice_rows(labeled_offset, labeled_offset + nl);
        (grab(out.backbone_feat), grab(out.proj1_feat), grab(out.embedding), grab(out.logits))
    });
    let stats = out.batch_stats.clone();
    let grads = tape.backward(loss.total)?;
    state.student.params.absorb(&grads)?;
    sgd_step(&mut state.student.params, lr, cfg.momentum, cfg.weight_decay)?;
    if let Some((mean, var)) = stats {
        state.student.update_running_stats(&mean, &var, total_rows);
    }

    let (mut probe_acc, mut proto_acc) = ([f64::NAN; 3], f64::NAN);
    if let Some((fb, f1, f2, logits)) = labeled_feats {
        proto_acc = accuracy(&logits, &labels);
        let acc = probe_step(
            &mut state.student,
            &[(Depth::Backbone, &fb), (Depth::Proj1, &f1), (Depth::Proj2, &f2)],
            &labels,
            cfg.probe_lr,
            PROBE_MOMENTUM,
        )?;
        for (k, d) in Depth::ALL.iter().enumerate() {
            probe_acc[k] = acc[d];
        }
    }

    ema_update(&mut state.teacher, &state.student)?;
    if cfg.method == Method::Daino {
        if let Some(tl) = teacher_logits {
            state.center = update_center(&state.center, &LogitBatch::new(tl)?)?;
        }
    }
    state.student.renormalize_prototypes();

    Ok(MetricsRecord {
        epoch: batch.epoch,
        step: g,
        loss_total,
        loss_sup: loss.sup,
        loss_unsup: loss.unsup,
        lr,
        assign_entropy_mean: assign_entropy,
        center_norm: state.center.norm(),
        probe_acc_backbone: probe_acc[0],
        probe_acc_proj1: probe_acc[1],
        probe_acc_proj2: probe_acc[2],
        proto_acc,
    })
}
