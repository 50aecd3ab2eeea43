//! Checkpoint format: a `u32` little-endian byte length, a UTF-8 JSON manifest of that
//! length, then every tensor as raw little-endian `f32` in manifest order.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::weights::{hex_digest, ModelWeights};
use crate::error::Result;
use crate::io::{read_bytes, write_bytes, DecodeError};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Hard cap on the manifest size, far above anything a real model needs.
const MAX_MANIFEST_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: ModelWeights,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the payload section.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn corrupt(reason: impl Into<String>) -> DecodeError {
    DecodeError::Corrupt(reason.into())
}

impl Checkpoint {
    pub fn new(config: ModelConfig, weights: ModelWeights) -> Result<Self> {
        weights.validate(&config)?;
        Ok(Self { config, weights })
    }

    /// SHA-256 of the encoded file bytes.
    pub fn checksum(&self) -> String {
        hex_digest(&Sha256::digest(encode_checkpoint(self)))
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut offset = 0;
    let tensors = ckpt
        .weights
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len() * 4;
            e
        })
        .collect();
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        config: ckpt.config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(4 + json.len() + offset);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in ckpt.weights.iter() {
        for v in t.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, DecodeError> {
    if bytes.len() < 4 {
        return Err(corrupt("truncated length prefix"));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_MANIFEST_BYTES || len > bytes.len() - 4 {
        return Err(corrupt(format!("manifest length {len} exceeds file size")));
    }
    let json = &bytes[4..4 + len];
    let probe: VersionProbe =
        serde_json::from_slice(json).map_err(|e| corrupt(format!("bad manifest: {e}")))?;
    if probe.format_version != CHECKPOINT_VERSION {
        return Err(DecodeError::Version {
            found: probe.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| corrupt(format!("bad manifest: {e}")))?;
    manifest
        .config
        .validate()
        .map_err(|e| corrupt(format!("bad config: {e}")))?;
    let payload = &bytes[4 + len..];
    let mut weights = ModelWeights::new();
    let mut expected_offset = 0usize;
    for entry in &manifest.tensors {
        if entry.offset != expected_offset {
            return Err(corrupt(format!("tensor {} has offset {}", entry.name, entry.offset)));
        }
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt(format!("tensor {} shape overflows", entry.name)))?;
        let end = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(entry.offset))
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| corrupt(format!("tensor {} runs past end of file", entry.name)))?;
        if weights.try_get(&entry.name).is_some() {
            return Err(corrupt(format!("duplicate tensor {}", entry.name)));
        }
        let values: Vec<f64> = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
            .map_err(|e| corrupt(format!("tensor {}: {e}", entry.name)))?;
        weights.insert(entry.name.clone(), t);
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(corrupt(format!(
            "{} trailing payload bytes",
            payload.len() - expected_offset
        )));
    }
    weights
        .validate(&manifest.config)
        .map_err(|e| corrupt(e.to_string()))?;
    Ok(Checkpoint {
        config: manifest.config,
        weights,
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode_checkpoint(ckpt))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_bytes(path)?;
    decode_checkpoint(&bytes).map_err(|e| e.at(path))
}
