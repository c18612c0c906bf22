//! Accuracy of the prototype head and the probes, assignment entropy and
//! cluster purity on held-out data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assign::entropy;
use crate::data::Dataset;
use crate::gradcore::{GradError, Mode, Tape, Tensor};
use crate::model::{encode, probe_forward, probe_step, Depth, EncoderParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate on an empty dataset")]
    Empty,
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// Temperature used for the reported assignment entropy.
pub const REPORT_TAU: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    /// Accuracy of the argmax over prototype logits.
    pub proto_top1: f64,
    pub probe_top1: BTreeMap<Depth, f64>,
    /// Mean entropy of `softmax(logits / τ)` per sample.
    pub mean_assignment_entropy: f64,
    /// `Σ_k max_c |cluster k ∩ class c| / N`, clusters from the prototype argmax.
    pub cluster_purity: f64,
    /// NaN for classes absent from the data.
    pub per_class_accuracy: Vec<f64>,
}

impl EvalReport {
    /// `key = value` lines, one metric per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "samples = {}", self.samples).unwrap();
        writeln!(s, "proto_top1 = {}", self.proto_top1).unwrap();
        for (d, acc) in &self.probe_top1 {
            writeln!(s, "probe_top1.{} = {acc}", d.as_str()).unwrap();
        }
        writeln!(s, "mean_assignment_entropy = {}", self.mean_assignment_entropy).unwrap();
        writeln!(s, "cluster_purity = {}", self.cluster_purity).unwrap();
        let per: Vec<String> = self.per_class_accuracy.iter().map(f64::to_string).collect();
        writeln!(s, "per_class_accuracy = {}", per.join(",")).unwrap();
        s
    }
}

pub fn evaluate(params: &EncoderParams, testset: &Dataset) -> Result<EvalReport, EvalError> {
    evaluate_with(params, testset, REPORT_TAU)
}

/// As [`evaluate`] with an explicit entropy temperature. Accuracies do not
/// depend on `tau`.
pub fn evaluate_with(params: &EncoderParams, testset: &Dataset, tau: f64) -> Result<EvalReport, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::Empty);
    }
    let out = encode(params, &testset.samples, Mode::Eval)?;
    let n = testset.len();
    let c = testset.class_count;
    let pred = out.logits.argmax_rows();
    let labels = &testset.labels;

    let proto_top1 = agreement(&pred, labels);
    let mut probe_top1 = BTreeMap::new();
    for depth in Depth::ALL {
        let mut tape = Tape::new();
        let logits = probe_forward(params, &mut tape, out.at_depth(depth), depth)?;
        probe_top1.insert(depth, agreement(&tape.value(logits).argmax_rows(), labels));
    }

    let mut ent = 0.0;
    let mut row = vec![0.0; out.logits.cols()];
    for i in 0..n {
        let z = out.logits.row(i);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().zip(z).for_each(|(r, v)| *r = ((v - m) / tau).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|r| *r /= s);
        ent += entropy(&row);
    }

    let k = out.logits.cols();
    let mut table = vec![vec![0usize; c]; k];
    for (&p, &y) in pred.iter().zip(labels) {
        table[p][y] += 1;
    }
    let purity = table.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum::<usize>() as f64 / n as f64;

    let mut hits = vec![0usize; c];
    let mut counts = vec![0usize; c];
    for (&p, &y) in pred.iter().zip(labels) {
        counts[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let per_class_accuracy =
        hits.iter().zip(&counts).map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 }).collect();

    Ok(EvalReport {
        samples: n,
        proto_top1,
        probe_top1,
        mean_assignment_entropy: ent / n as f64,
        cluster_purity: purity,
        per_class_accuracy,
    })
}

fn agreement(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

/// Trains only the probe heads on detached eval-mode features of
/// `indices`, cycling through reshuffled minibatches. The encoder is not
/// modified.
pub fn probe_fit_online(
    params: &mut EncoderParams,
    dataset: &Dataset,
    indices: &[usize],
    batch: usize,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(), EvalError> {
    if steps == 0 {
        return Ok(());
    }
    if indices.is_empty() || batch == 0 {
        return Err(EvalError::Empty);
    }
    let (x, y) = dataset.gather(indices);
    let feats = encode(params, &x, Mode::Eval)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..indices.len()).collect();
    let mut pos = order.len();
    for _ in 0..steps {
        let mut pick = Vec::with_capacity(batch);
        while pick.len() < batch.min(order.len()) {
            if pos == order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            pick.push(order[pos]);
            pos += 1;
        }
        let rows = |t: &Tensor| {
            let d = t.cols();
            Tensor::matrix(pick.len(), d, pick.iter().flat_map(|&i| t.row(i).iter().copied()).collect())
        };
        let fb = rows(&feats.backbone_feat);
        let f1 = rows(&feats.proj1_feat);
        let f2 = rows(&feats.embedding);
        let labels: Vec<usize> = pick.iter().map(|&i| y[i]).collect();
        probe_step(params, &[(Depth::Backbone, &fb), (Depth::Proj1, &f1), (Depth::Proj2, &f2)], &labels, lr, 0.9)?;
    }
    Ok(())
}

/// Writes `label,e0,e1,…` with one row per sample at `depth`.
pub fn export_embeddings(params: &EncoderParams, dataset: &Dataset, depth: Depth, path: &Path) -> Result<(), EvalError> {
    let out = encode(params, &dataset.samples, Mode::Eval)?;
    let e = out.at_depth(depth);
    let mut s = String::from("label");
    for j in 0..e.cols() {
        write!(s, ",e{j}").unwrap();
    }
    s.push('\n');
    for i in 0..dataset.len() {
        write!(s, "{}", dataset.labels[i]).unwrap();
        for v in e.row(i) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}
