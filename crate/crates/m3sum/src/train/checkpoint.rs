//! Self-describing binary checkpoints.
//!
//! Layout, little-endian throughout:
//!   magic "M3CK" | version u32 | header_len u32 | header JSON |
//!   per tensor: name_len u32 | name | rank u32 | dims u32[rank] | f32 data
//!
//! Tensors hold the model parameters in canonical order followed by the
//! optimizer moments as `adam.m.<name>` and `adam.v.<name>`. Loading
//! validates magic, version, header, and the full shape table before
//! returning anything.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{param_shapes, ModelConfig, ParamSet};
use crate::train::{Adam, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"M3CK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reconstruct and continue a run: the architecture,
/// the optimization settings (whose seed, with `step`, pins the sampling
/// schedule), the step count, and the language list in tag-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Completed optimization steps.
    pub step: usize,
    /// Languages in tag-id order (tag id = RESERVED_TOKENS + index).
    pub langs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    tensors: Vec<(String, Tensor<f32>)>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl Checkpoint {
    /// Assemble a checkpoint from live training state.
    pub fn build(
        header: CheckpointHeader,
        params: &ParamSet<f32>,
        adam: Option<&Adam>,
    ) -> Result<Self> {
        let mut tensors: Vec<(String, Tensor<f32>)> =
            params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        if let Some(adam) = adam {
            for moment in [ADAM_M, ADAM_V] {
                for (name, t) in params.iter() {
                    let (m, v) = adam.moments(name).ok_or_else(|| {
                        Error::contract(format!("optimizer has no state for {name}"))
                    })?;
                    let data = if moment == ADAM_M { m } else { v };
                    tensors.push((
                        format!("{moment}{name}"),
                        Tensor::new(t.shape().to_vec(), data.to_vec())?,
                    ));
                }
            }
        }
        let ckpt = Checkpoint { header, tensors };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn has_optimizer_state(&self) -> bool {
        self.tensors.iter().any(|(n, _)| n.starts_with(ADAM_M))
    }

    fn find(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Check the tensor table against the header's model configuration:
    /// every expected parameter exactly once with its canonical shape,
    /// optimizer moments (if any) complete and matching, nothing else.
    fn validate(&self) -> Result<()> {
        self.header.model.validate()?;
        self.header.train.validate()?;
        if self.header.version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "checkpoint header version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.header.version
            )));
        }
        if self.header.langs.len() != self.header.model.k_langs {
            return Err(Error::format(format!(
                "checkpoint lists {} languages, model config has k_langs = {}",
                self.header.langs.len(),
                self.header.model.k_langs
            )));
        }
        let expected = param_shapes(&self.header.model);
        let shape_of: BTreeMap<&str, &[usize]> =
            expected.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();

        let mut seen = BTreeMap::<&str, usize>::new();
        for (name, t) in &self.tensors {
            *seen.entry(name.as_str()).or_insert(0) += 1;
            let base = name
                .strip_prefix(ADAM_M)
                .or_else(|| name.strip_prefix(ADAM_V))
                .unwrap_or(name.as_str());
            let want = shape_of.get(base).ok_or_else(|| {
                Error::format(format!("checkpoint tensor {name} not in the parameter table"))
            })?;
            if t.shape() != *want {
                return Err(Error::format(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        for (name, count) in &seen {
            if *count > 1 {
                return Err(Error::format(format!("checkpoint tensor {name} appears {count} times")));
            }
        }
        for (name, _) in &expected {
            if !seen.contains_key(name.as_str()) {
                return Err(Error::format(format!("checkpoint is missing parameter {name}")));
            }
        }
        if self.has_optimizer_state() {
            for (name, _) in &expected {
                for prefix in [ADAM_M, ADAM_V] {
                    let full = format!("{prefix}{name}");
                    if !seen.contains_key(full.as_str()) {
                        return Err(Error::format(format!(
                            "checkpoint optimizer state is missing {full}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Model parameters in canonical order.
    pub fn params(&self) -> Result<ParamSet<f32>> {
        let entries = param_shapes(&self.header.model)
            .into_iter()
            .map(|(name, _)| {
                let t = self
                    .find(&name)
                    .ok_or_else(|| Error::format(format!("checkpoint is missing parameter {name}")))?
                    .clone();
                Ok((name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        ParamSet::from_entries(entries)
    }

    /// Optimizer state, when the checkpoint carries it.
    pub fn adam(&self) -> Result<Option<Adam>> {
        if !self.has_optimizer_state() {
            return Ok(None);
        }
        let params = self.params()?;
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, t) in &self.tensors {
            if let Some(base) = name.strip_prefix(ADAM_M) {
                m.insert(base.to_string(), t.data().to_vec());
            } else if let Some(base) = name.strip_prefix(ADAM_V) {
                v.insert(base.to_string(), t.data().to_vec());
            }
        }
        let adam = Adam::restore(&self.header.train, &params, self.header.step as u64, m, v)?;
        Ok(Some(adam))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header =
            serde_json::to_vec(&self.header).map_err(|e| Error::format(e.to_string()))?;
        let mut out = Vec::with_capacity(header.len() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(header.len()).map_err(|_| {
            Error::format("checkpoint header exceeds u32 length")
        })?.to_le_bytes());
        out.extend_from_slice(&header);
        for (name, t) in &self.tensors {
            let name_len = u32::try_from(name.len())
                .map_err(|_| Error::format(format!("tensor name {name} too long")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::format(format!("tensor {name} dim exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(format!(
                "bad checkpoint magic {:?} (expected {:?})",
                &magic[..4.min(magic.len())],
                CHECKPOINT_MAGIC
            )));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = r.u32("header length")? as usize;
        let header_bytes = r.take(header_len, "header")?;
        let header: CheckpointHeader = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::format(format!("checkpoint header: {e}")))?;

        let mut tensors = Vec::new();
        while !r.at_end() {
            let name_len = r.u32("tensor name length")? as usize;
            if name_len == 0 || name_len > 4096 {
                return Err(Error::format(format!(
                    "tensor record {}: implausible name length {name_len}",
                    tensors.len()
                )));
            }
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::format("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32(&format!("{name}: rank"))? as usize;
            if rank > 2 {
                return Err(Error::format(format!("tensor {name}: rank {rank} > 2")));
            }
            let mut shape = Vec::with_capacity(rank);
            for i in 0..rank {
                shape.push(r.u32(&format!("{name}: dim {i}"))? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::format(format!("tensor {name}: size overflow")))?;
            let data_len = numel
                .checked_mul(4)
                .ok_or_else(|| Error::format(format!("tensor {name}: size overflow")))?;
            let raw = r.take(data_len, &format!("{name}: data"))?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }

        let ckpt = Checkpoint { header, tensors };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(Error::format(format!(
                "checkpoint truncated reading {what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}
