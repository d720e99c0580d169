//! Versioned binary checkpoint container.
//!
//! Layout: magic `RSCP`, `u16` format version, `u32` header length, JSON
//! header, then little-endian `f32` parameter tensors in declaration order.
//! When optimizer state is present, the Adam first and second moments
//! follow in the same order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::cnn::{Architecture, MiniCnn};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RSCP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MiniCnn,
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: usize,
    pub optimizer: Option<Adam>,
    pub best_val_overall_accuracy: Option<f64>,
}

impl Checkpoint {
    pub fn new(model: MiniCnn, seed: u64, epoch: usize) -> Self {
        Self {
            model,
            seed,
            epoch,
            optimizer: None,
            best_val_overall_accuracy: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    seed: u64,
    epoch: usize,
    tensors: Vec<TensorInfo>,
    optimizer: Option<Adam>,
    best_val_overall_accuracy: Option<f64>,
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let arch = ckpt.model.architecture().clone();
    let header = Header {
        tensors: arch
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| TensorInfo { name, shape })
            .collect(),
        architecture: arch,
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        optimizer: ckpt.optimizer.clone(),
        best_val_overall_accuracy: ckpt.best_val_overall_accuracy,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut tensors: Vec<&[f32]> = ckpt.model.params().iter().map(Vec::as_slice).collect();
    if let Some(adam) = &ckpt.optimizer {
        tensors.extend(adam.m.iter().map(Vec::as_slice));
        tensors.extend(adam.v.iter().map(Vec::as_slice));
    }
    for t in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedCheckpoint(format!("missing {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::invalid("not a checkpoint file (bad magic)"));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::invalid(format!("bad checkpoint header: {e}")))?;
    let shapes = header.architecture.tensor_shapes();
    if shapes.len() != header.tensors.len()
        || shapes
            .iter()
            .zip(&header.tensors)
            .any(|((n, s), t)| *n != t.name || *s != t.shape)
    {
        return Err(Error::invalid("checkpoint tensor table does not match architecture"));
    }
    let sizes: Vec<usize> = shapes.iter().map(|(_, s)| s.iter().product()).collect();
    let mut params = Vec::with_capacity(sizes.len());
    for ((name, _), &n) in shapes.iter().zip(&sizes) {
        params.push(r.f32s(n, name)?);
    }
    let optimizer = match header.optimizer {
        Some(mut adam) => {
            adam.m = sizes
                .iter()
                .map(|&n| r.f32s(n, "optimizer first moment"))
                .collect::<Result<_>>()?;
            adam.v = sizes
                .iter()
                .map(|&n| r.f32s(n, "optimizer second moment"))
                .collect::<Result<_>>()?;
            Some(adam)
        }
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(Error::invalid(format!(
            "{} trailing bytes after checkpoint tensors",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        model: MiniCnn::from_params(header.architecture, params)?,
        seed: header.seed,
        epoch: header.epoch,
        optimizer,
        best_val_overall_accuracy: header.best_val_overall_accuracy,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        e @ (Error::TruncatedCheckpoint(_) | Error::VersionMismatch { .. }) => e,
        other => Error::format(path, other.to_string()),
    })
}
