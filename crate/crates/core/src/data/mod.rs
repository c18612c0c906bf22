//! Datasets, label splits, view generation and batch mixing.

mod augment;
mod idx;
mod mix;
mod split;
mod synthetic;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gradcore::Tensor;

pub use augment::{augment_batch, augment_labeled, augment_views, worker_pool, AugPolicy, BatchViews, ViewSet};
pub use idx::{load_idx, load_idx_with_classes, parse_idx_images, parse_idx_labels};
pub use mix::{mix_batch, MixKind, MixPlan, MixSpec};
pub use split::{split_labels, LabelAmount, Split, SplitSpec};
pub use synthetic::{make_synthetic, make_synthetic_with_test, SyntheticKind};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error: {0}")]
    Format(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Labeled sample matrix. Every row has a class id, even when the id is
/// hidden from training by the split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, class_count: usize, name: &str) -> Result<Self, DataError> {
        if samples.shape().len() != 2 || samples.rows() != labels.len() {
            return Err(DataError::Consistency(format!("{} labels for samples of shape {:?}", labels.len(), samples.shape())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(DataError::Consistency(format!("label {bad} outside [0, {class_count})")));
        }
        if !samples.is_finite() {
            return Err(DataError::Format("non-finite sample value".into()));
        }
        Ok(Self { samples, labels, class_count, name: name.to_string() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        (Tensor::matrix(indices.len(), d, data), indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Writes `label,f0,f1,…` rows. Values are printed in shortest
    /// round-trip form, so loading the file back is exact.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::from("label");
        for j in 0..self.dim() {
            write!(out, ",f{j}").unwrap();
        }
        out.push('\n');
        for i in 0..self.len() {
            write!(out, "{}", self.labels[i]).unwrap();
            for v in self.sample(i) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(io_err(path))
    }

    /// Reads a file written by [`Dataset::write_csv`]. The class count is
    /// taken from `class_count` or else inferred as `max label + 1`.
    pub fn load_csv(path: &Path, class_count: Option<usize>) -> Result<Dataset, DataError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| DataError::Format(format!("{}: empty file", path.display())))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"label") || cols.len() < 2 {
            return Err(DataError::Format(format!("{}: header must start with `label`", path.display())));
        }
        let d = cols.len() - 1;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(DataError::Format(format!(
                    "{}:{}: expected {} fields, got {}",
                    path.display(),
                    no + 1,
                    d + 1,
                    fields.len()
                )));
            }
            let y: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| DataError::Format(format!("{}:{}: bad label {:?}", path.display(), no + 1, fields[0])))?;
            labels.push(y);
            for f in &fields[1..] {
                let v: f64 =
                    f.trim().parse().map_err(|_| DataError::Format(format!("{}:{}: bad value {f:?}", path.display(), no + 1)))?;
                data.push(v);
            }
        }
        let c = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv");
        Dataset::new(Tensor::matrix(labels.len(), d, data), labels, c, name)
    }
}

/// Mixes several integers into one well-spread 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(0x5EED_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}
