//! `OVCK` checkpoint files: magic, u16 LE version, a u32-length-prefixed
//! JSON metadata block, then a parameter table (u32 count; per entry a
//! u32-length-prefixed UTF-8 name and a TNSR blob).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::tensor::tnsr::{self, DType};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"OVCK";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub epochs: usize,
    pub source_dataset: String,
    pub adam: AdamConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u16,
    pub meta: CheckpointMeta,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, epochs: usize, source_dataset: impl Into<String>, adam: AdamConfig) -> Self {
        Self {
            version: VERSION,
            meta: CheckpointMeta {
                kind: model.kind().to_string(),
                config: model.config(),
                seed,
                epochs,
                source_dataset: source_dataset.into(),
                adam,
            },
            params: model.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        push_len(&mut out, meta.len())?;
        out.extend_from_slice(&meta);
        push_len(&mut out, self.params.len())?;
        for (name, value) in &self.params {
            push_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            tnsr::write(value, DType::F64, &mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let count = r.u32()?;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let (tensor, used) = tnsr::decode_prefix(&bytes[r.pos..])?;
            r.pos += used;
            params.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok(Self { version, meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the model described by the metadata and fills in the stored
    /// parameters.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::build(self.meta.config.clone(), self.meta.seed)?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    /// Copies stored tensors into `model`. The parameter name sets must match
    /// exactly and every shape must agree.
    pub fn load_into(&self, model: &mut Model) -> Result<()> {
        let expected: BTreeSet<String> = model.params().names().into_iter().collect();
        let stored: BTreeSet<String> = self.params.iter().map(|(n, _)| n.clone()).collect();
        if expected != stored || stored.len() != self.params.len() {
            let missing: Vec<_> = expected.difference(&stored).cloned().collect();
            let extra: Vec<_> = stored.difference(&expected).cloned().collect();
            return Err(Error::Validation(format!(
                "checkpoint parameters do not match the model: missing [{}], extra [{}]",
                missing.join(", "),
                extra.join(", ")
            )));
        }
        let store = model.params_mut();
        for (name, value) in &self.params {
            let p = store.by_name_mut(name).unwrap();
            if p.value.shape() != value.shape() {
                return Err(Error::Validation(format!(
                    "parameter {name} has shape {:?} in the checkpoint but {:?} in the model",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }
}

fn push_len(out: &mut Vec<u8>, len: usize) -> Result<()> {
    let len = u32::try_from(len).map_err(|_| Error::Format(format!("length {len} exceeds u32")))?;
    out.extend_from_slice(&len.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::cnn::{CnnConfig, CnnKind};

    fn tiny() -> Model {
        let mut c = CnnConfig::new(CnnKind::VggMini);
        c.stage_widths = vec![2, 3];
        c.blocks_per_stage = 1;
        c.image_size = 8;
        Model::build(ModelConfig::Cnn(c), 4).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let model = tiny();
        let ck = Checkpoint::from_model(&model, 4, 3, "surrogate", AdamConfig::default());
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let rebuilt = back.to_model().unwrap();
        assert_eq!(rebuilt.params(), model.params());
    }

    #[test]
    fn mismatch_lists_names() {
        let ck = Checkpoint::from_model(&tiny(), 4, 0, "s", AdamConfig::default());
        let mut other = Model::build(ModelConfig::for_kind("resnet-mini".parse().unwrap(), 8, 3, 3), 0).unwrap();
        let err = ck.load_into(&mut other).unwrap_err().to_string();
        assert!(err.contains("missing [") && err.contains("stages.0.0.conv.weight"), "{err}");
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = Checkpoint::from_model(&tiny(), 4, 0, "s", AdamConfig::default()).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
