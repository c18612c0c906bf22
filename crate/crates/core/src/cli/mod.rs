//! Command-line front end: subcommands, config resolution and the run
//! directory layout.
//!
//! A run directory holds `resolved_config.txt`, `metrics.csv`,
//! `checkpoints/{last,final}.ckpt` and `eval_report.txt`.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use log::info;
use thiserror::Error;

pub use config::{
    known_keys, parse_config, parse_config_text, ConfigError, DataConfig, DataKind, EvalConfig, RunConfig, SplitConfig,
};

use crate::data::{
    load_idx, load_idx_with_classes, make_synthetic, make_synthetic_with_test, split_labels, DataError, Dataset, LabelAmount,
    Split, SplitSpec,
};
use crate::eval::{evaluate, export_embeddings, EvalError, EvalReport};
use crate::trainer::{finetune_config, load_checkpoint, CheckpointError, MetricsWriter, RunHooks, TrainError, Trainer};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{}: {source}", path.display())]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("{0}")]
    Missing(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Semi-supervised pre-training from scratch.
    Pretrain,
    /// Continue from `finetune.checkpoint` with fresh prototypes.
    Finetune,
    /// Score a checkpoint on the held-out data.
    Eval,
    /// Write per-sample embeddings of the training data.
    ExportEmbeddings,
    /// Write the configured synthetic data as CSV.
    MakeData,
}

#[derive(Debug, Parser)]
#[command(name = "suave-lab", version, about = "Semi-supervised training with Sinkhorn or center/sharpen pseudo-labels")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Flat `section.key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set optim.base_lr=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Run directory (`run.outdir`, default `runs/default`).
    #[arg(long)]
    pub outdir: Option<PathBuf>,
    /// Seeds the data, the label split and training.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Cli {
    /// Defaults, then the file, then `--outdir`/`--seed`, then `--set`.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = parse_config(self.config.as_deref(), &[])?;
        if let Some(o) = &self.outdir {
            cfg.outdir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.data.seed = s;
            cfg.split.seed = s;
        }
        for o in &self.set {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: 0,
                msg: format!("--set {o:?} is not of the form section.key=value"),
            })?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Missing(format!("`{key}` must be set for this data kind")))
}

/// Training data and, when configured, held-out data.
pub fn load_data(d: &DataConfig) -> Result<(Dataset, Option<Dataset>), CliError> {
    let classes = (d.classes > 0).then_some(d.classes);
    match d.kind {
        DataKind::Synthetic(kind) => {
            if d.test_n == 0 {
                Ok((make_synthetic(kind, d.n, d.dim, d.classes, d.separation, d.seed)?, None))
            } else {
                let (train, test) = make_synthetic_with_test(kind, d.n, d.test_n, d.dim, d.classes, d.separation, d.seed)?;
                Ok((train, Some(test)))
            }
        }
        DataKind::Csv => {
            let train = Dataset::load_csv(require(&d.train_path, "data.train_path")?, classes)?;
            let test = match &d.test_path {
                Some(p) => Some(Dataset::load_csv(p, Some(train.class_count))?),
                None => None,
            };
            Ok((train, test))
        }
        DataKind::Idx => {
            let images = require(&d.train_path, "data.train_path")?;
            let labels = require(&d.train_labels, "data.train_labels")?;
            let train = match classes {
                Some(c) => load_idx_with_classes(images, labels, c)?,
                None => load_idx(images, labels)?,
            };
            let test = match (&d.test_path, &d.test_labels) {
                (Some(i), Some(l)) => Some(load_idx_with_classes(i, l, train.class_count)?),
                (None, None) => None,
                _ => return Err(CliError::Missing("`data.test_path` and `data.test_labels` must be set together".into())),
            };
            Ok((train, test))
        }
    }
}

pub fn make_split(ds: &Dataset, s: &SplitConfig) -> Result<Split, CliError> {
    let amount = match s.labeled_per_class {
        Some(k) => LabelAmount::PerClass(k),
        None => LabelAmount::Fraction(s.labeled_fraction),
    };
    Ok(split_labels(ds, &SplitSpec { amount, seed: s.seed })?)
}

fn write_resolved(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.outdir).map_err(io_err(&cfg.outdir))?;
    let path = cfg.outdir.join("resolved_config.txt");
    fs::write(&path, cfg.to_text()).map_err(io_err(&path))
}

fn write_report(cfg: &RunConfig, report: &EvalReport) -> Result<(), CliError> {
    let path = cfg.outdir.join("eval_report.txt");
    fs::write(&path, report.to_text()).map_err(io_err(&path))
}

fn hooks(cfg: &RunConfig) -> Result<RunHooks, CliError> {
    Ok(RunHooks {
        metrics: Some(MetricsWriter::create(&cfg.outdir.join("metrics.csv"))?),
        checkpoint_dir: Some(cfg.outdir.join("checkpoints")),
        stop_at_step: None,
    })
}

fn train_and_report(cfg: &RunConfig, mut trainer: Trainer<'_>, test: &Dataset) -> Result<EvalReport, CliError> {
    trainer.run(&mut hooks(cfg)?)?;
    let report = evaluate(&trainer.state().student, test)?;
    write_report(cfg, &report)?;
    Ok(report)
}

fn load_params(path: &Path) -> Result<crate::model::EncoderParams, CliError> {
    load_checkpoint(path).and_then(|c| c.student()).map_err(|e| match e {
        CheckpointError::Io { path, source } => CliError::Io { path, source },
        source => CliError::Checkpoint { path: path.to_path_buf(), source },
    })
}

/// Runs one subcommand against a resolved configuration. Returns the text
/// printed on success.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<String, CliError> {
    write_resolved(cfg)?;
    match command {
        Command::Pretrain => {
            let (train, test) = load_data(&cfg.data)?;
            let split = make_split(&train, &cfg.split)?;
            info!("pretraining on {} samples, {} labeled", train.len(), split.labeled.len());
            let trainer = Trainer::new(&train, &split, &cfg.train)?;
            let report = train_and_report(cfg, trainer, test.as_ref().unwrap_or(&train))?;
            Ok(report.to_text())
        }
        Command::Finetune => {
            let ckpt = require(&cfg.finetune_checkpoint, "finetune.checkpoint")?;
            let pre = load_params(ckpt)?;
            let (train, test) = load_data(&cfg.data)?;
            let split = make_split(&train, &cfg.split)?;
            let ft = finetune_config(&cfg.train, &cfg.finetune);
            let trainer = Trainer::finetune(&train, &split, &ft, &pre)?;
            let report = train_and_report(cfg, trainer, test.as_ref().unwrap_or(&train))?;
            Ok(report.to_text())
        }
        Command::Eval => {
            let params = load_params(&cfg.eval_checkpoint())?;
            let (train, test) = load_data(&cfg.data)?;
            let report = evaluate(&params, test.as_ref().unwrap_or(&train))?;
            write_report(cfg, &report)?;
            Ok(report.to_text())
        }
        Command::ExportEmbeddings => {
            let params = load_params(&cfg.eval_checkpoint())?;
            let (train, _) = load_data(&cfg.data)?;
            let out = cfg.eval.output.clone().unwrap_or_else(|| cfg.outdir.join("embeddings.csv"));
            export_embeddings(&params, &train, cfg.eval.depth, &out)?;
            Ok(format!("wrote {} rows to {}\n", train.len(), out.display()))
        }
        Command::MakeData => {
            if !matches!(cfg.data.kind, DataKind::Synthetic(_)) {
                return Err(CliError::Missing("make-data needs a synthetic `data.kind`".into()));
            }
            let (train, test) = load_data(&cfg.data)?;
            let mut msg = String::new();
            for (name, ds) in [("train.csv", Some(&train)), ("test.csv", test.as_ref())] {
                if let Some(ds) = ds {
                    let p = cfg.outdir.join(name);
                    ds.write_csv(&p)?;
                    msg.push_str(&format!("wrote {} rows to {}\n", ds.len(), p.display()));
                }
            }
            Ok(msg)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print a single line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.resolve().and_then(|cfg| execute(cli.command, &cfg)) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("suave-lab").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn seed_flag_then_set_precedence() {
        let c = cli(&["pretrain", "--seed", "7", "--set", "train.seed=9", "--outdir", "x"]);
        let cfg = c.resolve().unwrap();
        assert_eq!((cfg.train.seed, cfg.data.seed, cfg.split.seed), (9, 7, 7));
        assert_eq!(cfg.outdir, PathBuf::from("x"));
    }

    #[test]
    fn subcommand_names() {
        assert_eq!(cli(&["export-embeddings"]).command, Command::ExportEmbeddings);
        assert_eq!(cli(&["make-data"]).command, Command::MakeData);
        assert!(Cli::try_parse_from(["suave-lab", "train"]).is_err());
    }

    #[test]
    fn eval_without_checkpoint_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig { outdir: dir.path().to_path_buf(), ..RunConfig::default() };
        cfg.data.n = 64;
        cfg.data.test_n = 16;
        let err = execute(Command::Eval, &cfg).unwrap_err().to_string();
        assert!(err.contains("final.ckpt"), "{err}");
    }

    #[test]
    fn make_data_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig { outdir: dir.path().to_path_buf(), ..RunConfig::default() };
        cfg.data.n = 50;
        cfg.data.test_n = 10;
        execute(Command::MakeData, &cfg).unwrap();
        let (train, test) = load_data(&cfg.data).unwrap();
        let back = Dataset::load_csv(&dir.path().join("train.csv"), Some(8)).unwrap();
        assert_eq!(back.samples, train.samples);
        assert_eq!(back.labels, train.labels);
        let back = Dataset::load_csv(&dir.path().join("test.csv"), Some(8)).unwrap();
        assert_eq!(back.labels, test.unwrap().labels);
    }
}
