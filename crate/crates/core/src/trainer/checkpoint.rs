//! CKPT1 checkpoint files.
//!
//! ```text
//! magic "CKPT1\0" | version u32 | architecture hash u64 | tensor count u32
//! per tensor: name length u16 | UTF-8 name | rank u32 | extents u32[rank]
//!             | f32 LE payload
//! ```
//!
//! Besides the model parameters a file carries `config.model` (the seven
//! [`ModelConfig`] fields), `train.epoch`, and, when optimizer state is
//! saved, `<name>.m` / `<name>.v` moments and the 0-rank step counter
//! `adam.t`. Counters are stored as f32 and are exact below 2^24.

use std::collections::HashMap;
use std::path::Path;

use super::AdamState;
use crate::ndcore::Tensor;
use crate::transformer::{ModelConfig, ModelParams, ParamSet};
use crate::{Error, Result};

pub const MAGIC: &[u8; 6] = b"CKPT1\0";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

const CONFIG_NAME: &str = "config.model";
const EPOCH_NAME: &str = "train.epoch";
const STEP_NAME: &str = "adam.t";
const COUNTER_LIMIT: u64 = 1 << 24;

/// Everything needed to rebuild a model and, optionally, continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub adam: Option<AdamState<f32>>,
    /// Completed epochs.
    pub epoch: usize,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn counter(value: u64, what: &str) -> Result<Tensor<f32>> {
    if value > COUNTER_LIMIT {
        return Err(ckpt_err(format!("{what} {value} is too large to store exactly")));
    }
    Ok(Tensor::scalar(value as f32))
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn architecture_hash(&self) -> u64 {
        self.config.architecture_hash()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut entries: Vec<(String, &Tensor<f32>)> = Vec::new();
        let fields = Tensor::new(
            vec![7],
            self.config.to_fields().iter().map(|&f| f as f32).collect(),
        )?;
        if self.config.to_fields().iter().any(|&f| f as u64 > COUNTER_LIMIT) {
            return Err(ckpt_err("model config field too large to store exactly"));
        }
        let epoch = counter(self.epoch as u64, "epoch")?;
        self.params.visit(|name, t| entries.push((name.to_owned(), t)));
        let step;
        if let Some(adam) = &self.adam {
            adam.m.visit(|name, t| entries.push((format!("{name}.m"), t)));
            adam.v.visit(|name, t| entries.push((format!("{name}.v"), t)));
            step = counter(adam.t, "Adam step")?;
            entries.push((STEP_NAME.to_owned(), &step));
        }
        entries.push((CONFIG_NAME.to_owned(), &fields));
        entries.push((EPOCH_NAME.to_owned(), &epoch));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.architecture_hash().to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in &entries {
            push_tensor(&mut out, name, t);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(ckpt_err("bad checkpoint magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ckpt_err(format!("unsupported checkpoint version {version}")));
        }
        let hash = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u32()? as usize;
        let mut tensors = HashMap::new();
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(ckpt_err(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(ckpt_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut take = |name: &str| {
            tensors
                .remove(name)
                .ok_or_else(|| ckpt_err(format!("missing tensor {name}")))
        };
        let fields = take(CONFIG_NAME)?;
        let values = fields.data();
        if fields.shape() != [7] || values.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
            return Err(ckpt_err(format!("{CONFIG_NAME} must hold 7 non-negative integers")));
        }
        let config = ModelConfig::from_fields(std::array::from_fn(|i| values[i] as usize));
        config.validate().map_err(|e| ckpt_err(format!("stored config invalid: {e}")))?;
        if config.architecture_hash() != hash {
            return Err(ckpt_err(format!(
                "architecture hash {hash:016x} does not match stored config ({:016x})",
                config.architecture_hash()
            )));
        }
        let read_counter = |t: Tensor<f32>, name: &str| -> Result<u64> {
            let v = t.item().map_err(|_| ckpt_err(format!("{name} must be a scalar")))?;
            if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
                return Err(ckpt_err(format!("{name} must be a non-negative integer")));
            }
            Ok(v as u64)
        };
        let epoch = read_counter(take(EPOCH_NAME)?, EPOCH_NAME)? as usize;
        let params = ParamSet::try_from_fn(&mut take)?;
        params.check_shapes(&config)?;
        let adam = match take(STEP_NAME) {
            Err(_) => None,
            Ok(step) => {
                let t = read_counter(step, STEP_NAME)?;
                let m = ParamSet::try_from_fn(|name| take(&format!("{name}.m")))?;
                let v = ParamSet::try_from_fn(|name| take(&format!("{name}.v")))?;
                m.check_shapes(&config)?;
                v.check_shapes(&config)?;
                Some(AdamState { m, v, t })
            }
        };
        if let Some(extra) = tensors.keys().min() {
            return Err(ckpt_err(format!("unexpected tensor {extra}")));
        }
        let mut params = params;
        params.visit_mut(|_, t| t.set_requires_grad(true));
        Ok(Self {
            config,
            params,
            adam,
            epoch,
        })
    }

    /// Written to a sibling temp file first, then renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fails unless the checkpoint was built for `config`'s architecture.
    pub fn expect_config(&self, config: &ModelConfig) -> Result<()> {
        if config.architecture_hash() != self.architecture_hash() {
            return Err(ckpt_err(format!(
                "checkpoint architecture {:016x} does not match expected {:016x}",
                self.architecture_hash(),
                config.architecture_hash()
            )));
        }
        Ok(())
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ckpt_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| ckpt_err("tensor name is not UTF-8"))?
            .to_owned();
        let rank = self.u32()? as usize;
        if rank > MAX_RANK {
            return Err(ckpt_err(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = self.u32()? as usize;
            if d == 0 {
                return Err(ckpt_err(format!("tensor {name} has a zero extent")));
            }
            shape.push(d);
        }
        let bytes = shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| ckpt_err(format!("tensor {name} is too large")))?;
        let payload = self.take(bytes)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}
