//! Versioned binary checkpoint container.
//!
//! Layout: magic `SKTCN1`, u32 LE length, JSON metadata of that length, then
//! every tensor of [`ModelParams::tensors`] as little-endian f32 in
//! declaration order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::preprocess::NormalizationConfig;
use crate::skeleton::{ClassTable, JointSetId};
use crate::windowing::WindowConfig;

pub const MAGIC: &[u8; 6] = b"SKTCN1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub joint_set: JointSetId,
    pub classes: ClassTable,
    pub normalization: NormalizationConfig,
    pub window: WindowConfig,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.meta.model != self.params.config {
            return Err(Error::Checkpoint("metadata model config differs from parameters".into()));
        }
        let json = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(10 + json.len() + 4 * self.params.tensors().iter().map(|t| t.2.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in self.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(bad("missing SKTCN1 header"));
        }
        let len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(10..10 + len).ok_or_else(|| bad("truncated metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        meta.model.validate()?;
        let mut params = ModelParams::<f32>::zeros(&meta.model);
        let body = &bytes[10 + len..];
        let expected: usize = params.tensors_mut().iter().map(|(_, t)| t.len() * 4).sum();
        if body.len() != expected {
            return Err(Error::Checkpoint(format!(
                "tensor payload is {} bytes, expected {expected}",
                body.len()
            )));
        }
        let mut chunks = body.chunks_exact(4);
        for (_, t) in params.tensors_mut() {
            for (v, c) in t.iter_mut().zip(chunks.by_ref()) {
                *v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            }
        }
        Ok(Checkpoint { meta, params })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
