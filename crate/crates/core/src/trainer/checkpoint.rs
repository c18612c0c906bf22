//! Versioned checkpoint files: a text manifest ending in `end`, followed
//! by a little-endian `f64` payload.
//!
//! ```text
//! SUAVE-CKPT 1
//! config <sha256>
//! meta <key> <value>
//! tensor <name> <d0>x<d1>|- <byte offset> <byte length>
//! end
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{TrainConfig, TrainState};
use crate::assign::{CenterState, LogitQueue};
use crate::gradcore::{ParamSet, Tensor};
use crate::model::{init_encoder, Architecture, EncoderParams, TeacherState};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "SUAVE-CKPT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found} is not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint was written for a different configuration (hash {found}, expected {expected})")]
    ConfigMismatch { found: String, expected: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn shape_str(shape: &[usize]) -> String {
    if shape.is_empty() {
        "-".into()
    } else {
        shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> Result<Vec<usize>, CheckpointError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split('x').map(|d| d.parse().map_err(|_| CheckpointError::Format(format!("bad shape {s:?}")))).collect()
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut head = format!("{MAGIC} {FORMAT_VERSION}\nconfig {}\n", ckpt.config_hash);
    for (k, v) in &ckpt.meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(CheckpointError::Format(format!("meta entry {k:?} cannot be encoded")));
        }
        writeln!(head, "meta {k} {v}").unwrap();
    }
    let mut payload = Vec::new();
    for (name, t) in &ckpt.tensors {
        if name.contains(char::is_whitespace) {
            return Err(CheckpointError::Format(format!("tensor name {name:?} contains whitespace")));
        }
        writeln!(head, "tensor {name} {} {} {}", shape_str(t.shape()), payload.len(), t.len() * 8).unwrap();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    head.push_str("end\n");
    let mut bytes = head.into_bytes();
    bytes.extend_from_slice(&payload);
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    fs::write(&tmp, &bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let fmt = |m: String| CheckpointError::Format(m);
    let mut pos = 0;
    let mut next_line = || -> Result<&str, CheckpointError> {
        let rest = &bytes[pos..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| fmt("manifest is not terminated".into()))?;
        pos += nl + 1;
        std::str::from_utf8(&rest[..nl]).map_err(|_| fmt("manifest is not UTF-8".into()))
    };
    let first = next_line()?;
    let version = first
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| fmt(format!("missing {MAGIC} header")))?
        .parse::<u32>()
        .map_err(|_| fmt("bad format version".into()))?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
    }
    let mut ckpt = Checkpoint::default();
    let mut entries = Vec::new();
    loop {
        let line = next_line()?;
        let mut parts = line.splitn(2, ' ');
        match (parts.next(), parts.next()) {
            (Some("end"), None) => break,
            (Some("config"), Some(h)) => ckpt.config_hash = h.to_string(),
            (Some("meta"), Some(kv)) => {
                let (k, v) = kv.split_once(' ').unwrap_or((kv, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            }
            (Some("tensor"), Some(rest)) => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 4 {
                    return Err(fmt(format!("bad tensor line {line:?}")));
                }
                let num = |s: &str| s.parse::<usize>().map_err(|_| fmt(format!("bad number in {line:?}")));
                entries.push((f[0].to_string(), parse_shape(f[1])?, num(f[2])?, num(f[3])?));
            }
            _ => return Err(fmt(format!("unexpected manifest line {line:?}"))),
        }
    }
    let payload = &bytes[pos..];
    let expected: usize = entries.iter().map(|e| e.3).sum();
    if payload.len() != expected {
        return Err(fmt(format!("payload holds {} bytes, manifest describes {expected}", payload.len())));
    }
    for (name, shape, offset, len) in entries {
        let count: usize = shape.iter().product();
        if len != count * 8 || offset + len > payload.len() {
            return Err(fmt(format!("tensor {name}: length {len} does not fit shape {shape:?} at offset {offset}")));
        }
        let data = payload[offset..offset + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| fmt(e.to_string()))?;
        ckpt.tensors.insert(name, t);
    }
    Ok(ckpt)
}

impl Checkpoint {
    pub fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        self.meta
            .get(key)
            .ok_or_else(|| CheckpointError::Format(format!("missing meta entry {key}")))?
            .parse()
            .map_err(|_| CheckpointError::Format(format!("bad meta entry {key}")))
    }

    fn tensor(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors.get(name).ok_or_else(|| CheckpointError::Format(format!("missing tensor {name}")))
    }

    /// Architecture recorded in the manifest.
    pub fn architecture(&self) -> Result<Architecture, CheckpointError> {
        let hidden: String = self.meta_value("arch.hidden_dims")?;
        let hidden_dims = hidden
            .split(',')
            .map(|v| v.parse().map_err(|_| CheckpointError::Format("bad arch.hidden_dims".into())))
            .collect::<Result<_, _>>()?;
        Ok(Architecture {
            input_dim: self.meta_value("arch.input_dim")?,
            hidden_dims,
            proj_hidden: self.meta_value("arch.proj_hidden")?,
            proj_out: self.meta_value("arch.proj_out")?,
            num_classes: self.meta_value("arch.num_classes")?,
        })
    }

    /// Student encoder only, e.g. for evaluation.
    pub fn student(&self) -> Result<EncoderParams, CheckpointError> {
        self.encoder("student", &self.architecture()?)
    }

    fn put_set(&mut self, prefix: &str, set: &ParamSet) {
        for (name, p) in set.iter() {
            self.tensors.insert(format!("{prefix}.value/{name}"), p.value.clone());
            self.tensors.insert(format!("{prefix}.momentum/{name}"), p.momentum.clone());
        }
    }

    fn put_encoder(&mut self, prefix: &str, e: &EncoderParams) {
        self.put_set(&format!("{prefix}/param"), &e.params);
        self.put_set(&format!("{prefix}/probe"), &e.probes);
        for (name, t) in &e.buffers {
            self.tensors.insert(format!("{prefix}/buffer/{name}"), t.clone());
        }
    }

    fn fill_set(&self, prefix: &str, set: &mut ParamSet) -> Result<(), CheckpointError> {
        let names: Vec<String> = set.names().map(str::to_string).collect();
        for name in names {
            let value = self.tensor(&format!("{prefix}.value/{name}"))?;
            let momentum = self.tensor(&format!("{prefix}.momentum/{name}"))?;
            let p = set.param_mut(&name).expect("listed name");
            if value.shape() != p.value.shape() || momentum.shape() != p.value.shape() {
                return Err(CheckpointError::Format(format!(
                    "{prefix}/{name}: shape {:?}, expected {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
            p.momentum = momentum.clone();
            p.grad = None;
        }
        Ok(())
    }

    fn encoder(&self, prefix: &str, arch: &Architecture) -> Result<EncoderParams, CheckpointError> {
        let mut e = init_encoder(arch, 0).map_err(|err| CheckpointError::Format(err.to_string()))?;
        self.fill_set(&format!("{prefix}/param"), &mut e.params)?;
        self.fill_set(&format!("{prefix}/probe"), &mut e.probes)?;
        for (name, t) in e.buffers.iter_mut() {
            let stored = self.tensor(&format!("{prefix}/buffer/{name}"))?;
            if stored.shape() != t.shape() {
                return Err(CheckpointError::Format(format!("buffer {name}: bad shape")));
            }
            *t = stored.clone();
        }
        Ok(e)
    }
}

impl TrainState {
    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut c = Checkpoint { config_hash: cfg.hash(), ..Checkpoint::default() };
        let arch = &self.student.arch;
        let hidden = arch.hidden_dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        for (k, v) in [
            ("arch.input_dim", arch.input_dim.to_string()),
            ("arch.hidden_dims", hidden),
            ("arch.proj_hidden", arch.proj_hidden.to_string()),
            ("arch.proj_out", arch.proj_out.to_string()),
            ("arch.num_classes", arch.num_classes.to_string()),
            ("method", cfg.method.to_string()),
            ("epoch", self.epoch.to_string()),
            ("step_in_epoch", self.step_in_epoch.to_string()),
            ("global_step", self.global_step.to_string()),
            ("teacher_eta", self.teacher.eta.to_string()),
            ("center_mu", self.center.mu.to_string()),
            ("queue_capacity", self.queues.first().map_or(0, LogitQueue::capacity).to_string()),
            ("queues", self.queues.len().to_string()),
        ] {
            c.meta.insert(k.to_string(), v);
        }
        c.put_encoder("student", &self.student);
        c.put_encoder("teacher", &self.teacher.params);
        c.tensors.insert("center".into(), Tensor::new(vec![self.center.gamma.len()], self.center.gamma.clone()).expect("vector"));
        for (k, q) in self.queues.iter().enumerate() {
            c.tensors.insert(format!("queue/{k}"), q.to_tensor());
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<TrainState, CheckpointError> {
        let arch = c.architecture()?;
        let student = c.encoder("student", &arch)?;
        let teacher = TeacherState { params: c.encoder("teacher", &arch)?, eta: c.meta_value("teacher_eta")? };
        let gamma = c.tensor("center")?.data().to_vec();
        if gamma.len() != arch.num_classes {
            return Err(CheckpointError::Format("center width does not match the class count".into()));
        }
        let center = CenterState { gamma, mu: c.meta_value("center_mu")? };
        let capacity: usize = c.meta_value("queue_capacity")?;
        let n_queues: usize = c.meta_value("queues")?;
        let queues = (0..n_queues)
            .map(|k| {
                LogitQueue::from_tensor(capacity, arch.num_classes, c.tensor(&format!("queue/{k}"))?)
                    .map_err(|e| CheckpointError::Format(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(TrainState {
            student,
            teacher,
            center,
            queues,
            epoch: c.meta_value("epoch")?,
            step_in_epoch: c.meta_value("step_in_epoch")?,
            global_step: c.meta_value("global_step")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint { config_hash: "abc".into(), ..Checkpoint::default() };
        c.meta.insert("epoch".into(), "3".into());
        c.tensors.insert("a".into(), Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]));
        c.tensors.insert("s".into(), Tensor::scalar(0.1));
        c.tensors.insert("empty".into(), Tensor::zeros(&[0, 4]));
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        let c = sample();
        save_checkpoint(&c, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, c);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.tensors["a"]), bits(&c.tensors["a"]));
    }

    #[test]
    fn truncated_payload_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        save_checkpoint(&sample(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        assert!(matches!(parse(&bytes), Err(CheckpointError::Format(_))));
        let text = fs::read(&p).unwrap();
        let bumped = [b"SUAVE-CKPT 2".as_slice(), &text[12..]].concat();
        assert!(matches!(parse(&bumped), Err(CheckpointError::Version { found: 2, expected: 1 })));
    }
}
