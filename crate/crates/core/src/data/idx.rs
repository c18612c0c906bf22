use std::fs;
use std::path::Path;

use super::{io_err, DataError, Dataset};
use crate::gradcore::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Format(format!("{what}: truncated header")))
}

/// Decodes an unsigned-byte rank-3 IDX file into `(count, rows·cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), DataError> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::Format(format!("images: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let want = n * rows * cols;
    if body.len() != want {
        return Err(DataError::Format(format!("images: header promises {want} pixel bytes, file has {}", body.len())));
    }
    Ok((n, rows * cols, body.to_vec()))
}

/// Decodes an unsigned-byte rank-1 IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(DataError::Format(format!("labels: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(DataError::Format(format!("labels: header promises {n} labels, file has {}", body.len())));
    }
    Ok(body.to_vec())
}

/// Loads an IDX image/label pair; the class count is `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    load(images_path, labels_path, None)
}

/// As [`load_idx`] with a known class count; larger labels are rejected.
pub fn load_idx_with_classes(images_path: &Path, labels_path: &Path, classes: usize) -> Result<Dataset, DataError> {
    load(images_path, labels_path, Some(classes))
}

fn load(images_path: &Path, labels_path: &Path, classes: Option<usize>) -> Result<Dataset, DataError> {
    let img = fs::read(images_path).map_err(io_err(images_path))?;
    let lab = fs::read(labels_path).map_err(io_err(labels_path))?;
    let (n, d, pixels) = parse_idx_images(&img)?;
    let labels = parse_idx_labels(&lab)?;
    if labels.len() != n {
        return Err(DataError::Consistency(format!("{n} images but {} labels", labels.len())));
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let c = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let samples = Tensor::matrix(n, d, pixels.into_iter().map(|p| f64::from(p) / 255.0).collect());
    let name = images_path.file_stem().and_then(|s| s.to_str()).unwrap_or("idx");
    Dataset::new(samples, labels, c, name)
}
