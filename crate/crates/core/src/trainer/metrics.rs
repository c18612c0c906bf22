use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::TrainError;

pub const METRICS_HEADER: &str = "epoch,step,loss_total,loss_sup,loss_unsup,lr,assign_entropy_mean,center_norm,probe_acc_backbone,probe_acc_proj1,probe_acc_proj2,proto_acc";

/// One logged training step. Accuracies are measured on the labeled part
/// of the batch before the update and are NaN when it has no labeled rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_total: f64,
    pub loss_sup: f64,
    pub loss_unsup: f64,
    pub lr: f64,
    /// Entropy of the batch-mean assignment, averaged over global views.
    pub assign_entropy_mean: f64,
    pub center_norm: f64,
    pub probe_acc_backbone: f64,
    pub probe_acc_proj1: f64,
    pub probe_acc_proj2: f64,
    pub proto_acc: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.loss_total,
            self.loss_sup,
            self.loss_unsup,
            self.lr,
            self.assign_entropy_mean,
            self.center_norm,
            self.probe_acc_backbone,
            self.probe_acc_proj1,
            self.probe_acc_proj2,
            self.proto_acc
        )
    }
}

/// Appends rows to a metrics CSV, writing the header only to a new file.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        let io = |source| TrainError::Io { path: path.to_path_buf(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "{METRICS_HEADER}").map_err(io)?;
        Ok(Self { path: path.to_path_buf(), out })
    }

    /// Opens an existing file for appending (or creates it).
    pub fn append(path: &Path) -> Result<Self, TrainError> {
        if !path.exists() {
            return Self::create(path);
        }
        let f =
            OpenOptions::new().append(true).open(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> Result<(), TrainError> {
        writeln!(self.out, "{}", r.csv_row()).map_err(|source| TrainError::Io { path: self.path.clone(), source })
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush().map_err(|source| TrainError::Io { path: self.path.clone(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_order_matches_header() {
        let r = MetricsRecord {
            epoch: 1,
            step: 2,
            loss_total: 3.0,
            loss_sup: 4.0,
            loss_unsup: 5.0,
            lr: 6.0,
            assign_entropy_mean: 7.0,
            center_norm: 8.0,
            probe_acc_backbone: 9.0,
            probe_acc_proj1: 10.0,
            probe_acc_proj2: 11.0,
            proto_acc: f64::NAN,
        };
        assert_eq!(r.csv_row(), "1,2,3,4,5,6,7,8,9,10,11,NaN");
        assert_eq!(METRICS_HEADER.split(',').count(), 12);
    }
}
