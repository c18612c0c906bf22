//! Flat `section.key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::SyntheticKind;
use crate::model::Depth;
use crate::objective::ViewPairing;
use crate::trainer::{FinetuneOverrides, Method, TargetSource, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key `{key}`{}", .suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey { key: String, suggestion: Option<String> },
    #[error("`{key}`: expected {expected}, got {value:?}")]
    Type { key: String, expected: &'static str, value: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// Where samples come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Synthetic(SyntheticKind),
    Csv,
    Idx,
}

impl DataKind {
    fn as_str(self) -> &'static str {
        match self {
            DataKind::Synthetic(k) => k.as_str(),
            DataKind::Csv => "csv",
            DataKind::Idx => "idx",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(DataKind::Csv),
            "idx" => Some(DataKind::Idx),
            other => other.parse().ok().map(DataKind::Synthetic),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    pub n: usize,
    /// Held-out samples drawn alongside synthetic data (0 = none).
    pub test_n: usize,
    pub dim: usize,
    /// Class count; 0 infers it from the labels of file-backed data.
    pub classes: usize,
    pub separation: f64,
    pub seed: u64,
    /// CSV file, or IDX image file.
    pub train_path: Option<PathBuf>,
    /// IDX label file.
    pub train_labels: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Synthetic(SyntheticKind::GaussianBlobs),
            n: 4000,
            test_n: 1000,
            dim: 16,
            classes: 8,
            separation: 4.0,
            seed: 0,
            train_path: None,
            train_labels: None,
            test_path: None,
            test_labels: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    /// Takes precedence over the fraction when set.
    pub labeled_per_class: Option<usize>,
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { labeled_per_class: None, labeled_fraction: 0.01, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Defaults to `<outdir>/checkpoints/final.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub depth: Depth,
    /// Embedding CSV; defaults to `<outdir>/embeddings.csv`.
    pub output: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { checkpoint: None, depth: Depth::Proj2, output: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub finetune: FinetuneOverrides,
    /// Pre-trained checkpoint to fine-tune.
    pub finetune_checkpoint: Option<PathBuf>,
    pub eval: EvalConfig,
    pub outdir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            finetune: FinetuneOverrides::default(),
            finetune_checkpoint: None,
            eval: EvalConfig::default(),
            outdir: PathBuf::from("runs/default"),
        }
    }
}

enum Slot<'a> {
    Usize(&'a mut usize),
    U64(&'a mut u64),
    F64(&'a mut f64),
    Bool(&'a mut bool),
    UsizeList(&'a mut Vec<usize>),
    OptUsize(&'a mut Option<usize>),
    Path(&'a mut PathBuf),
    OptPath(&'a mut Option<PathBuf>),
    Method(&'a mut Method),
    Data(&'a mut DataKind),
    Pairing(&'a mut ViewPairing),
    Source(&'a mut TargetSource),
    Depth(&'a mut Depth),
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl Slot<'_> {
    fn render(&self) -> String {
        match self {
            Slot::Usize(v) => v.to_string(),
            Slot::U64(v) => v.to_string(),
            Slot::F64(v) => v.to_string(),
            Slot::Bool(v) => v.to_string(),
            Slot::UsizeList(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            Slot::OptUsize(v) => opt_str(v),
            Slot::Path(v) => v.display().to_string(),
            Slot::OptPath(v) => v.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string()),
            Slot::Method(v) => v.as_str().into(),
            Slot::Data(v) => v.as_str().into(),
            Slot::Pairing(v) => match v {
                ViewPairing::Swapped => "swapped".into(),
                ViewPairing::Plain => "plain".into(),
            },
            Slot::Source(v) => v.as_str().into(),
            Slot::Depth(v) => v.as_str().into(),
        }
    }

    fn assign(self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let ty = |expected: &'static str| ConfigError::Type { key: key.to_string(), expected, value: raw.to_string() };
        let none = raw.eq_ignore_ascii_case("none") || raw.is_empty();
        match self {
            Slot::Usize(v) => *v = raw.parse().map_err(|_| ty("a non-negative integer"))?,
            Slot::U64(v) => *v = raw.parse().map_err(|_| ty("a non-negative integer"))?,
            Slot::F64(v) => *v = raw.parse().map_err(|_| ty("a number"))?,
            Slot::Bool(v) => *v = raw.parse().map_err(|_| ty("true or false"))?,
            Slot::UsizeList(v) => {
                *v = raw
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| ty("a comma-separated list of integers"))?
            }
            Slot::OptUsize(v) => *v = if none { None } else { Some(raw.parse().map_err(|_| ty("an integer or none"))?) },
            Slot::Path(v) => *v = PathBuf::from(raw),
            Slot::OptPath(v) => *v = if none { None } else { Some(PathBuf::from(raw)) },
            Slot::Method(v) => *v = raw.parse().map_err(|_| ty("suave or daino"))?,
            Slot::Data(v) => {
                *v = DataKind::parse(raw).ok_or_else(|| ty("gaussian_blobs, two_moons, concentric_rings, csv or idx"))?
            }
            Slot::Pairing(v) => {
                *v = match raw {
                    "swapped" => ViewPairing::Swapped,
                    "plain" => ViewPairing::Plain,
                    _ => return Err(ty("swapped or plain")),
                }
            }
            Slot::Source(v) => *v = raw.parse().map_err(|_| ty("auto, teacher or student"))?,
            Slot::Depth(v) => *v = Depth::parse(raw).ok_or_else(|| ty("backbone, proj1 or proj2"))?,
        }
        Ok(())
    }
}

/// Every configurable key with a handle on its field, in display order.
fn slots(c: &mut RunConfig) -> Vec<(&'static str, Slot<'_>)> {
    let RunConfig { train: t, data: d, split: s, finetune: f, finetune_checkpoint, eval: e, outdir } = c;
    vec![
        ("run.outdir", Slot::Path(outdir)),
        ("data.kind", Slot::Data(&mut d.kind)),
        ("data.n", Slot::Usize(&mut d.n)),
        ("data.test_n", Slot::Usize(&mut d.test_n)),
        ("data.dim", Slot::Usize(&mut d.dim)),
        ("data.classes", Slot::Usize(&mut d.classes)),
        ("data.separation", Slot::F64(&mut d.separation)),
        ("data.seed", Slot::U64(&mut d.seed)),
        ("data.train_path", Slot::OptPath(&mut d.train_path)),
        ("data.train_labels", Slot::OptPath(&mut d.train_labels)),
        ("data.test_path", Slot::OptPath(&mut d.test_path)),
        ("data.test_labels", Slot::OptPath(&mut d.test_labels)),
        ("split.labeled_per_class", Slot::OptUsize(&mut s.labeled_per_class)),
        ("split.labeled_fraction", Slot::F64(&mut s.labeled_fraction)),
        ("split.seed", Slot::U64(&mut s.seed)),
        ("model.hidden_dims", Slot::UsizeList(&mut t.arch.hidden_dims)),
        ("model.proj_hidden", Slot::Usize(&mut t.arch.proj_hidden)),
        ("model.proj_out", Slot::Usize(&mut t.arch.proj_out)),
        ("train.method", Slot::Method(&mut t.method)),
        ("train.epochs", Slot::Usize(&mut t.epochs)),
        ("train.unlabeled_batch", Slot::Usize(&mut t.unlabeled_batch)),
        ("train.labeled_batch", Slot::Usize(&mut t.labeled_batch)),
        ("train.seed", Slot::U64(&mut t.seed)),
        ("train.log_every", Slot::Usize(&mut t.log_every)),
        ("train.view_pairing", Slot::Pairing(&mut t.view_pairing)),
        ("train.target_source", Slot::Source(&mut t.target_source)),
        ("train.probe_lr", Slot::F64(&mut t.probe_lr)),
        ("optim.base_lr", Slot::F64(&mut t.base_lr)),
        ("optim.final_lr", Slot::F64(&mut t.final_lr)),
        ("optim.warmup_epochs", Slot::Usize(&mut t.warmup_epochs)),
        ("optim.momentum", Slot::F64(&mut t.momentum)),
        ("optim.weight_decay", Slot::F64(&mut t.weight_decay)),
        ("loss.tau", Slot::F64(&mut t.tau)),
        ("loss.label_smoothing", Slot::F64(&mut t.label_smoothing)),
        ("sinkhorn.epsilon", Slot::F64(&mut t.sinkhorn.epsilon)),
        ("sinkhorn.iterations", Slot::Usize(&mut t.sinkhorn.iterations)),
        ("sinkhorn.queue_capacity", Slot::Usize(&mut t.sinkhorn.queue_capacity)),
        ("teacher.eta", Slot::F64(&mut t.teacher_eta)),
        ("daino.center_mu", Slot::F64(&mut t.center_mu)),
        ("daino.eps_start", Slot::F64(&mut t.teacher_eps_start)),
        ("daino.eps_end", Slot::F64(&mut t.teacher_eps_end)),
        ("daino.eps_warmup_epochs", Slot::Usize(&mut t.teacher_eps_warmup)),
        ("aug.global_views", Slot::Usize(&mut t.aug.global_views)),
        ("aug.local_views", Slot::Usize(&mut t.aug.local_views)),
        ("aug.global_noise_sigma", Slot::F64(&mut t.aug.global_noise_sigma)),
        ("aug.local_noise_sigma", Slot::F64(&mut t.aug.local_noise_sigma)),
        ("aug.global_mask_frac", Slot::F64(&mut t.aug.global_mask_frac)),
        ("aug.local_mask_frac", Slot::F64(&mut t.aug.local_mask_frac)),
        ("aug.labeled_noise_sigma", Slot::F64(&mut t.aug.labeled_noise_sigma)),
        ("aug.scale_min", Slot::F64(&mut t.aug.scale_jitter_range.0)),
        ("aug.scale_max", Slot::F64(&mut t.aug.scale_jitter_range.1)),
        ("mix.enabled", Slot::Bool(&mut t.mix.enabled)),
        ("mix.beta_alpha", Slot::F64(&mut t.mix.beta_alpha)),
        ("mix.cutmix_prob", Slot::F64(&mut t.mix.cutmix_prob)),
        ("mix.mix_prob", Slot::F64(&mut t.mix.mix_prob)),
        ("finetune.checkpoint", Slot::OptPath(finetune_checkpoint)),
        ("finetune.epochs", Slot::Usize(&mut f.epochs)),
        ("finetune.base_lr", Slot::F64(&mut f.base_lr)),
        ("finetune.final_lr", Slot::F64(&mut f.final_lr)),
        ("finetune.corruption_scale", Slot::F64(&mut f.corruption_scale)),
        ("finetune.target_source", Slot::Source(&mut f.target_source)),
        ("eval.checkpoint", Slot::OptPath(&mut e.checkpoint)),
        ("eval.depth", Slot::Depth(&mut e.depth)),
        ("eval.output", Slot::OptPath(&mut e.output)),
    ]
}

/// All valid keys in display order.
pub fn known_keys() -> Vec<&'static str> {
    slots(&mut RunConfig::default()).into_iter().map(|(k, _)| k).collect()
}

fn nearest_key(key: &str) -> Option<String> {
    known_keys()
        .into_iter()
        .map(|k| (strsim::jaro_winkler(key, k), k))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|(score, _)| *score > 0.6)
        .map(|(_, k)| k.to_string())
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let slot = slots(self).into_iter().find(|(k, _)| *k == key).map(|(_, s)| s);
        match slot {
            Some(s) => s.assign(key, value.trim()),
            None => Err(ConfigError::UnknownKey { key: key.to_string(), suggestion: nearest_key(key) }),
        }
    }

    pub fn get(&mut self, key: &str) -> Option<String> {
        slots(self).into_iter().find(|(k, _)| *k == key).map(|(_, s)| s.render())
    }

    /// Every key as `key = value`, loadable by [`parse_config_text`].
    pub fn to_text(&self) -> String {
        let mut copy = self.clone();
        slots(&mut copy).into_iter().map(|(k, s)| format!("{k} = {}\n", s.render())).collect()
    }

    /// `<outdir>/checkpoints/final.ckpt` unless configured.
    pub fn eval_checkpoint(&self) -> PathBuf {
        self.eval.checkpoint.clone().unwrap_or_else(|| self.outdir.join("checkpoints").join("final.ckpt"))
    }
}

/// Applies `section.key = value` lines to `cfg`. `#` starts a comment.
pub fn parse_config_text(cfg: &mut RunConfig, text: &str) -> Result<(), ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Parse { line: i + 1, msg: format!("expected `section.key = value`, got {line:?}") });
        };
        let k = k.trim();
        if !k.contains('.') {
            return Err(ConfigError::Parse { line: i + 1, msg: format!("key {k:?} has no section") });
        }
        cfg.set(k, v).map_err(|e| match e {
            ConfigError::UnknownKey { .. } | ConfigError::Type { .. } => ConfigError::Parse { line: i + 1, msg: e.to_string() },
            other => other,
        })?;
    }
    Ok(())
}

/// Defaults, then the file, then `K=V` overrides in order.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
        parse_config_text(&mut cfg, &text)?;
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse { line: 0, msg: format!("override {o:?} is not of the form section.key=value") })?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}
