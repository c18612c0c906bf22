use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use super::{
    save_checkpoint, train_step, BatchSampler, Checkpoint, CheckpointError, MetricsRecord, MetricsWriter, Schedule, TargetSource,
    TrainConfig, TrainError, TrainState,
};
use crate::data::{derive_seed, Dataset, Split};
use crate::gradcore::Tensor;
use crate::model::{reinit_prototypes, EncoderParams};

const FINETUNE_STREAM: u64 = 0xf1;

/// Optional side effects of [`Trainer::run`].
#[derive(Default)]
pub struct RunHooks {
    /// Logged rows are appended here as they are produced.
    pub metrics: Option<MetricsWriter>,
    /// `last.ckpt` is rewritten after every epoch and `final.ckpt` at the end.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once this many steps have been taken in total.
    pub stop_at_step: Option<usize>,
}

/// Owns the training state and walks the batch schedule.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    cfg: TrainConfig,
    sampler: BatchSampler,
    schedule: Schedule,
    state: TrainState,
    history: Vec<MetricsRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, split: &Split, cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let state = TrainState::init(dataset, cfg)?;
        Self::with_state(dataset, split, cfg, state)
    }

    pub fn with_state(dataset: &'a Dataset, split: &Split, cfg: &TrainConfig, state: TrainState) -> Result<Self, TrainError> {
        cfg.validate()?;
        let arch = &state.student.arch;
        if arch.input_dim != dataset.dim() || arch.num_classes != dataset.class_count {
            return Err(TrainError::Config(format!(
                "encoder expects {} features and {} classes, dataset has {} and {}",
                arch.input_dim,
                arch.num_classes,
                dataset.dim(),
                dataset.class_count
            )));
        }
        let sampler = BatchSampler::new(split, cfg)?;
        let schedule = Schedule::new(cfg, sampler.steps_per_epoch());
        Ok(Self { dataset, cfg: cfg.clone(), sampler, schedule, state, history: Vec::new() })
    }

    /// Continues from a checkpoint written under the same configuration.
    pub fn resume(dataset: &'a Dataset, split: &Split, cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let expected = cfg.hash();
        if ckpt.config_hash != expected {
            return Err(CheckpointError::ConfigMismatch { found: ckpt.config_hash.clone(), expected }.into());
        }
        Self::with_state(dataset, split, cfg, TrainState::from_checkpoint(ckpt)?)
    }

    /// Starts semi-supervised fine-tuning from pre-trained weights:
    /// fresh prototypes, a re-synchronized teacher, zeroed optimizer
    /// buffers, empty queues and center, and reset counters.
    pub fn finetune(
        dataset: &'a Dataset,
        split: &Split,
        cfg: &TrainConfig,
        pretrained: &EncoderParams,
    ) -> Result<Self, TrainError> {
        let mut student = pretrained.clone();
        reinit_prototypes(&mut student, derive_seed(&[cfg.seed, FINETUNE_STREAM]));
        for (_, p) in student.params.iter_mut() {
            p.momentum = Tensor::zeros(p.value.shape());
            p.grad = None;
        }
        Self::with_state(dataset, split, cfg, TrainState::from_student(student, cfg))
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn sampler(&self) -> &BatchSampler {
        &self.sampler
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn history(&self) -> &[MetricsRecord] {
        &self.history
    }

    pub fn into_parts(self) -> (TrainState, Vec<MetricsRecord>) {
        (self.state, self.history)
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.state.to_checkpoint(&self.cfg)
    }

    /// Takes the next step. Returns the record when the step is logged.
    pub fn step(&mut self) -> Result<Option<MetricsRecord>, TrainError> {
        if self.is_finished() {
            return Err(TrainError::Config("training already finished".into()));
        }
        let s = &self.state;
        let batch = self.sampler.batch(s.epoch, s.step_in_epoch, s.global_step);
        let record = train_step(&mut self.state, self.dataset, &batch, &self.cfg, &self.schedule)?;
        let s = &mut self.state;
        s.global_step += 1;
        s.step_in_epoch += 1;
        if s.step_in_epoch == self.schedule.steps_per_epoch {
            s.step_in_epoch = 0;
            s.epoch += 1;
        }
        if batch.global_step % self.cfg.log_every == 0 {
            self.history.push(record.clone());
            return Ok(Some(record));
        }
        Ok(None)
    }

    /// Runs until the configured epochs are done or `stop_at_step` is hit.
    pub fn run(&mut self, hooks: &mut RunHooks) -> Result<(), TrainError> {
        if let Some(dir) = &hooks.checkpoint_dir {
            fs::create_dir_all(dir).map_err(|source| TrainError::Io { path: dir.clone(), source })?;
        }
        while !self.is_finished() {
            if hooks.stop_at_step.is_some_and(|s| self.state.global_step >= s) {
                break;
            }
            let epoch = self.state.epoch;
            if let Some(r) = self.step()? {
                if let Some(w) = hooks.metrics.as_mut() {
                    w.write(&r)?;
                }
            }
            if self.state.epoch != epoch {
                if let Some(last) = self.history.last() {
                    info!("epoch {epoch}: loss {:.4} lr {:.5} entropy {:.4}", last.loss_total, last.lr, last.assign_entropy_mean);
                }
                if let Some(w) = hooks.metrics.as_mut() {
                    w.flush()?;
                }
                if let Some(dir) = &hooks.checkpoint_dir {
                    self.save(&dir.join("last.ckpt"))?;
                }
            }
        }
        if let Some(w) = hooks.metrics.as_mut() {
            w.flush()?;
        }
        if self.is_finished() {
            if let Some(dir) = &hooks.checkpoint_dir {
                self.save(&dir.join("final.ckpt"))?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(save_checkpoint(&self.checkpoint(), path)?)
    }
}

/// Semi-supervised pre-training from a fresh encoder.
pub fn pretrain(dataset: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<(EncoderParams, Vec<MetricsRecord>), TrainError> {
    let mut t = Trainer::new(dataset, split, cfg)?;
    t.run(&mut RunHooks::default())?;
    let (state, history) = t.into_parts();
    Ok((state.student, history))
}

/// Settings changed when switching from pre-training to fine-tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOverrides {
    pub epochs: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    /// Multiplies every noise sigma and mask fraction.
    pub corruption_scale: f64,
    /// Where Suave takes its targets from while fine-tuning. The teacher is
    /// re-synchronized to the fresh prototypes, so by default the student
    /// is used to avoid re-aligning against a lagging copy.
    pub target_source: TargetSource,
}

impl Default for FinetuneOverrides {
    fn default() -> Self {
        Self { epochs: 10, base_lr: 0.02, final_lr: 0.0002, corruption_scale: 0.5, target_source: TargetSource::Student }
    }
}

/// Fine-tuning configuration derived from the pre-training one: no local
/// views, weaker corruption, a lower learning rate without warmup.
pub fn finetune_config(base: &TrainConfig, o: &FinetuneOverrides) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.epochs = o.epochs;
    cfg.base_lr = o.base_lr;
    cfg.final_lr = o.final_lr;
    cfg.warmup_epochs = 0;
    cfg.teacher_eps_warmup = 0;
    cfg.aug.local_views = 0;
    cfg.target_source = o.target_source;
    let s = o.corruption_scale;
    cfg.aug.global_noise_sigma *= s;
    cfg.aug.local_noise_sigma *= s;
    cfg.aug.labeled_noise_sigma *= s;
    cfg.aug.global_mask_frac *= s;
    cfg.aug.local_mask_frac *= s;
    cfg
}

/// Semi-supervised fine-tuning of pre-trained weights with the same
/// objective (`cfg` is usually built by [`finetune_config`]).
pub fn finetune(
    dataset: &Dataset,
    split: &Split,
    pretrained: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, Vec<MetricsRecord>), TrainError> {
    let mut t = Trainer::finetune(dataset, split, cfg, pretrained)?;
    t.run(&mut RunHooks::default())?;
    let (state, history) = t.into_parts();
    Ok((state.student, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, split_labels, LabelAmount, SplitSpec};
    use crate::model::PROTOTYPES;

    fn small() -> (Dataset, Split, TrainConfig) {
        let ds = make_synthetic(crate::data::SyntheticKind::GaussianBlobs, 120, 6, 3, 4.0, 1).unwrap();
        let split = split_labels(&ds, &SplitSpec { amount: LabelAmount::PerClass(4), seed: 0 }).unwrap();
        let mut cfg = TrainConfig { epochs: 2, unlabeled_batch: 40, labeled_batch: 6, ..TrainConfig::default() };
        cfg.arch.hidden_dims = vec![16];
        cfg.arch.proj_hidden = 16;
        cfg.arch.proj_out = 8;
        (ds, split, cfg)
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (ds, split, mut cfg) = small();
        cfg.epochs = 0;
        let (params, history) = pretrain(&ds, &split, &cfg).unwrap();
        assert!(history.is_empty());
        assert_eq!(params, TrainState::init(&ds, &cfg).unwrap().student);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (ds, split, mut cfg) = small();
        cfg.base_lr = 0.0;
        cfg.final_lr = 0.0;
        cfg.epochs = 1;
        let init = TrainState::init(&ds, &cfg).unwrap().student;
        let (params, history) = pretrain(&ds, &split, &cfg).unwrap();
        assert!(history.iter().all(|r| r.loss_total.is_finite()));
        for (name, p) in params.params.iter() {
            let d = p.value.max_abs_diff(init.params.get(name).unwrap());
            assert!(d < 1e-15, "{name} moved by {d}");
        }
    }

    #[test]
    fn repeat_runs_are_identical() {
        let (ds, split, cfg) = small();
        let a = pretrain(&ds, &split, &cfg).unwrap();
        let b = pretrain(&ds, &split, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn finetune_zero_epochs_only_touches_prototypes() {
        let (ds, split, cfg) = small();
        let (pre, _) = pretrain(&ds, &split, &cfg).unwrap();
        let ft = finetune_config(&cfg, &FinetuneOverrides { epochs: 0, ..FinetuneOverrides::default() });
        assert_eq!(ft.aug.local_views, 0);
        let (post, _) = finetune(&ds, &split, &pre, &ft).unwrap();
        for (name, p) in post.params.iter() {
            let same = p.value == *pre.params.get(name).unwrap();
            assert_eq!(same, name != PROTOTYPES, "{name}");
        }
    }
}
