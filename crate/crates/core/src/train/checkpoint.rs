//! Binary checkpoint format.
//!
//! ```text
//! magic        4 bytes  "JGCK"
//! version      u32      1
//! header_len   u32
//! header       JSON     {model, global_step, vocab_fingerprint, num_params}
//! params       f32 × num_params
//! adam m       f32 × num_params
//! adam v       f32 × num_params
//! digest       32 bytes SHA-256 of everything above
//! ```
//! Integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::model::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    /// First-moment accumulator, one per parameter.
    pub m: Vec<f32>,
    /// Second-moment accumulator, one per parameter.
    pub v: Vec<f32>,
    /// Optimizer updates applied so far.
    pub global_step: u64,
    pub vocab_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    global_step: u64,
    vocab_fingerprint: String,
    num_params: usize,
}

impl Checkpoint {
    /// Fresh optimizer state at step 0.
    pub fn from_params(params: ModelParams<f32>, vocab_fingerprint: String) -> Self {
        let n = params.data.len();
        Checkpoint { params, m: vec![0.0; n], v: vec![0.0; n], global_step: 0, vocab_fingerprint }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.params.config.clone(),
            global_step: self.global_step,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            num_params: self.params.data.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let n = self.params.data.len();
        let mut out = Vec::with_capacity(12 + header.len() + 12 * n + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for arr in [&self.params.data, &self.m, &self.v] {
            for x in arr.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let corrupt = |why: &str| TrainError::CorruptCheckpoint(why.to_string());
        if bytes.len() < 12 + 32 {
            return Err(corrupt("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("integrity hash mismatch"));
        }
        if &body[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let word = |at: usize| u32::from_le_bytes(body[at..at + 4].try_into().expect("4 bytes"));
        if word(4) != CHECKPOINT_VERSION {
            return Err(corrupt("unsupported version"));
        }
        let header_len = word(8) as usize;
        let header_end = 12usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("header overruns file"))?;
        let header: Header = serde_json::from_slice(&body[12..header_end]).map_err(|e| corrupt(&format!("bad header: {e}")))?;
        let n = header.num_params;
        if body.len() - header_end != 12 * n {
            return Err(corrupt("payload size does not match header"));
        }
        let floats = |k: usize| -> Vec<f32> {
            body[header_end + 4 * n * k..header_end + 4 * n * (k + 1)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        };
        let params = ModelParams::from_data(header.model, floats(0)).map_err(|e| corrupt(&e.to_string()))?;
        Ok(Checkpoint { params, m: floats(1), v: floats(2), global_step: header.global_step, vocab_fingerprint: header.vocab_fingerprint })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TrainError::MissingFile(path.display().to_string()),
            _ => TrainError::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint; equal digests mean bit-identical
    /// checkpoints.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
