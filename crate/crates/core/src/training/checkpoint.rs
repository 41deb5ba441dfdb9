//! Binary checkpoint: `GFCK`, version, header length, JSON header,
//! little-endian `f32` parameters, CRC32 of the parameter bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, TrainConfig, TrainError};
use crate::ctc::Alphabet;
use crate::nn::{Architecture, ModelParams, Tensor};

pub const MAGIC: &[u8; 4] = b"GFCK";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model with everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub alphabet: Alphabet,
    /// Optimizer steps taken.
    pub step: u64,
    pub epoch: usize,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    alphabet: Alphabet,
    step: u64,
    epoch: usize,
    config: TrainConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.params.named_tensors();
        let header = Header {
            architecture: self.params.architecture().clone(),
            alphabet: self.alphabet.clone(),
            step: self.step,
            epoch: self.epoch,
            config: self.config.clone(),
            tensors: named
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("serializable");
        let mut payload = Vec::with_capacity(self.params.num_parameters() * 4);
        for (_, t) in &named {
            for &v in t.values() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(12 + header.len() + payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(TrainError::NotACheckpoint);
        }
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or(TrainError::CorruptChecksum)
        };
        let version = word(4)?;
        if version != FORMAT_VERSION {
            return Err(TrainError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = word(8)? as usize;
        let header_bytes = bytes
            .get(12..12 + header_len)
            .ok_or(TrainError::CorruptChecksum)?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| TrainError::CorruptHeader(e.to_string()))?;
        let count: usize = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        let start = 12 + header_len;
        let end = start + count * 4;
        if bytes.len() != end + 4 {
            return Err(TrainError::CorruptChecksum);
        }
        let payload = &bytes[start..end];
        if crc32fast::hash(payload) != word(end)? {
            return Err(TrainError::CorruptChecksum);
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
        let tensors = header
            .tensors
            .iter()
            .map(|e| {
                let n = e.shape.iter().product();
                Tensor::new(e.shape.clone(), values.by_ref().take(n).collect())
            })
            .collect::<crate::nn::Result<Vec<_>>>()?;
        let params = ModelParams::from_tensors(header.architecture, tensors)?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.iter().ne(header.tensors.iter().map(|t| &t.name)) {
            return Err(TrainError::CorruptHeader("tensor table does not match architecture".into()));
        }
        if header.alphabet.num_classes() != params.architecture().num_classes {
            return Err(TrainError::CorruptHeader("alphabet size does not match architecture".into()));
        }
        Ok(Self {
            params,
            alphabet: header.alphabet,
            step: header.step,
            epoch: header.epoch,
            config: header.config,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
