//! Semi-supervised pre-training and fine-tuning loops.

mod checkpoint;
mod metrics;
mod run;
mod sampler;
mod step;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assign::{AssignError, SinkhornConfig};
use crate::data::{AugPolicy, DataError, MixSpec};
use crate::gradcore::GradError;
use crate::model::Architecture;
use crate::objective::{LossConfig, ObjectiveError, ViewPairing};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, FORMAT_VERSION};
pub use metrics::{MetricsRecord, MetricsWriter, METRICS_HEADER};
pub use run::{finetune, finetune_config, pretrain, FinetuneOverrides, RunHooks, Trainer};
pub use sampler::{Batch, BatchSampler};
pub use step::{train_step, Schedule, TrainState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step}; unlabeled ids {unlabeled:?}, labeled ids {labeled:?}")]
    NonFiniteLoss { epoch: usize, step: usize, unlabeled: Vec<usize>, labeled: Vec<usize> },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Sinkhorn-Knopp assignments.
    Suave,
    /// Centering and sharpening of teacher logits.
    Daino,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Suave => "suave",
            Method::Daino => "daino",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "suave" => Ok(Method::Suave),
            "daino" => Ok(Method::Daino),
            other => Err(TrainError::Config(format!("unknown method {other:?} (expected suave or daino)"))),
        }
    }
}

/// Which encoder produces the logits that are turned into assignments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetSource {
    /// Teacher whenever `teacher_eta < 1`, otherwise the detached student.
    /// Daino always uses the teacher.
    Auto,
    Teacher,
    Student,
}

impl FromStr for TargetSource {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(TargetSource::Auto),
            "teacher" => Ok(TargetSource::Teacher),
            "student" => Ok(TargetSource::Student),
            other => Err(TrainError::Config(format!("unknown target source {other:?} (expected auto, teacher or student)"))),
        }
    }
}

impl TargetSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetSource::Auto => "auto",
            TargetSource::Teacher => "teacher",
            TargetSource::Student => "student",
        }
    }
}

/// Layer widths; input width and class count come from the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub hidden_dims: Vec<usize>,
    pub proj_hidden: usize,
    pub proj_out: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self { hidden_dims: vec![128, 128], proj_hidden: 128, proj_out: 32 }
    }
}

impl ArchSpec {
    pub fn resolve(&self, input_dim: usize, num_classes: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            proj_hidden: self.proj_hidden,
            proj_out: self.proj_out,
            num_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub arch: ArchSpec,
    pub epochs: usize,
    pub unlabeled_batch: usize,
    pub labeled_batch: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub sinkhorn: SinkhornConfig,
    pub center_mu: f64,
    pub teacher_eta: f64,
    pub teacher_eps_start: f64,
    pub teacher_eps_end: f64,
    pub teacher_eps_warmup: usize,
    pub tau: f64,
    pub label_smoothing: f64,
    pub view_pairing: ViewPairing,
    pub target_source: TargetSource,
    pub aug: AugPolicy,
    pub mix: MixSpec,
    pub probe_lr: f64,
    /// A metrics row is kept every `log_every` steps.
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Suave,
            arch: ArchSpec::default(),
            epochs: 30,
            unlabeled_batch: 128,
            labeled_batch: 128,
            base_lr: 0.1,
            final_lr: 0.001,
            warmup_epochs: 1,
            momentum: 0.9,
            weight_decay: 1e-6,
            sinkhorn: SinkhornConfig::default(),
            center_mu: 0.9,
            teacher_eta: 0.99,
            teacher_eps_start: 0.04,
            teacher_eps_end: 0.07,
            teacher_eps_warmup: 10,
            tau: 0.1,
            label_smoothing: 0.01,
            view_pairing: ViewPairing::Swapped,
            target_source: TargetSource::Auto,
            aug: AugPolicy::default(),
            mix: MixSpec::default(),
            probe_lr: 0.1,
            log_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.unlabeled_batch == 0 && self.labeled_batch == 0 {
            return bad("unlabeled_batch and labeled_batch cannot both be 0".into());
        }
        if !(self.base_lr >= 0.0 && self.final_lr >= 0.0 && self.base_lr.is_finite() && self.final_lr.is_finite()) {
            return bad(format!("learning rates must be finite and ≥ 0, got {} and {}", self.base_lr, self.final_lr));
        }
        for (name, v) in [("momentum", self.momentum), ("center_mu", self.center_mu), ("teacher_eta", self.teacher_eta)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if !(self.teacher_eps_start > 0.0 && self.teacher_eps_end > 0.0) {
            return bad("teacher temperatures must be > 0".into());
        }
        if !(self.probe_lr >= 0.0) {
            return bad(format!("probe_lr must be ≥ 0, got {}", self.probe_lr));
        }
        if self.log_every == 0 {
            return bad("log_every must be ≥ 1".into());
        }
        if self.unlabeled_batch > 0 {
            self.aug.validate()?;
            if self.view_pairing == ViewPairing::Swapped && self.aug.global_views != 2 {
                return bad(format!("swapped pairing needs exactly 2 global views, got {}", self.aug.global_views));
            }
            if self.method == Method::Suave {
                self.sinkhorn.validate(self.unlabeled_batch)?;
            }
        }
        self.mix.validate()?;
        self.loss_config().validate()?;
        if self.arch.hidden_dims.is_empty()
            || self.arch.hidden_dims.contains(&0)
            || self.arch.proj_hidden == 0
            || self.arch.proj_out == 0
        {
            return bad(format!("layer widths must be positive: {:?}", self.arch));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { tau: self.tau, label_smoothing: self.label_smoothing, view_pairing: self.view_pairing }
    }

    /// Whether assignments are computed from teacher logits.
    pub fn uses_teacher_targets(&self) -> bool {
        match (self.method, self.target_source) {
            (Method::Daino, _) => true,
            (_, TargetSource::Teacher) => true,
            (_, TargetSource::Student) => false,
            (Method::Suave, TargetSource::Auto) => self.teacher_eta < 1.0,
        }
    }

    /// Hex SHA-256 of the full configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
