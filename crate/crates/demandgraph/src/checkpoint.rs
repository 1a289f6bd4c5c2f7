//! Model checkpoints.
//!
//! Layout: the 8-byte magic `DGCKPT\0\0`, a little-endian `u32` format
//! version, a `u64` header length, a JSON header, then every parameter tensor
//! as little-endian `f64` in `ModelParams::tensors` order.

use std::io::{Read, Write};
use std::path::Path;

use demandgraph_core::model::{ModelConfig, ModelParams};
use demandgraph_core::train::ExperimentConfig;
use demandgraph_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const MAGIC: [u8; 8] = *b"DGCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub experiment: ExperimentConfig,
    pub model: ModelConfig,
    pub tensor_lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub experiment: ExperimentConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Training-region vocabulary, in classifier order.
    pub fn regions(&self) -> &[String] {
        &self.params.config.regions
    }

    /// Fails with a vocabulary error unless the checkpoint was trained on
    /// exactly `expected` (in order).
    pub fn check_vocabulary(&self, expected: &[String]) -> Result<()> {
        if self.regions() != expected {
            return Err(CoreError::Vocabulary(format!(
                "checkpoint knows {:?}, caller expects {:?}",
                self.regions(),
                expected
            ))
            .into());
        }
        Ok(())
    }
}

pub fn encode(checkpoint: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = checkpoint.params.tensors();
    let header = CheckpointHeader {
        experiment: checkpoint.experiment.clone(),
        model: checkpoint.params.config.clone(),
        tensor_lengths: tensors.iter().map(|t| t.len()).collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| AppError::corrupt("<checkpoint>", e))?;
    let payload: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(20 + header.len() + payload * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    let corrupt = |detail: &str| AppError::corrupt(origin, detail);
    if bytes.len() < 20 || bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(AppError::Version { kind: "checkpoint", found: version, expected: VERSION });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(20))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..header_end]).map_err(|e| AppError::corrupt(origin, e))?;
    let mut params = ModelParams::init(header.model, 0).map_err(|e| AppError::corrupt(origin, e))?;
    let expected: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    if expected != header.tensor_lengths {
        return Err(corrupt("tensor shapes disagree with the model config"));
    }
    let payload = &bytes[header_end..];
    if payload.len() != expected.iter().sum::<usize>() * 8 {
        return Err(corrupt("payload length does not match the header"));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for tensor in params.tensors_mut() {
        for (slot, v) in tensor.iter_mut().zip(&mut values) {
            *slot = v;
        }
    }
    if !params.is_finite() {
        return Err(corrupt("non-finite parameter"));
    }
    Ok(Checkpoint { experiment: header.experiment, params })
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = encode(checkpoint)?;
    let mut file = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AppError::io(path, e))?;
    decode(&bytes, path)
}
