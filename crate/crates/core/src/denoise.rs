//! Span corruption for denoising pretraining, plus the binary shard format
//! examples are materialized into.
//!
//! Span layout is sampled left to right: at each free position a span starts
//! with probability `p`, its length is `max(1, Poisson(mean_span))` clipped
//! to the sequence end, and the token after a span is always kept so spans
//! never touch. With `m = mean_span + exp(-mean_span)` (the mean of the
//! clipped length), `p = rate / (m * (1 - rate))` makes the long-run
//! corrupted fraction equal `rate`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::tokenizer::{EOS_ID, NUM_SENTINELS, PAD_ID};

#[derive(Debug, Error, PartialEq)]
pub enum DenoiseError {
    #[error("corruption rate must be in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("mean span length must be at least 1, got {0}")]
    InvalidMeanSpan(f64),
    #[error("input contains special id {0}")]
    SpecialId(u32),
    #[error("{0} spans exceed the {NUM_SENTINELS} available sentinels")]
    TooManySpans(usize),
    #[error("sentinels in encoder input and target do not line up")]
    SentinelMismatch,
    #[error("cannot shift an empty target")]
    EmptyTarget,
    #[error("span {start}+{len} is out of range or overlaps its neighbour")]
    BadSpan { start: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub rate: f64,
    pub mean_span: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { rate: 0.15, mean_span: 3.0 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), DenoiseError> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(DenoiseError::InvalidRate(self.rate));
        }
        if !(self.mean_span >= 1.0) {
            return Err(DenoiseError::InvalidMeanSpan(self.mean_span));
        }
        Ok(())
    }

    fn start_probability(&self) -> f64 {
        let clipped_mean = self.mean_span + (-self.mean_span).exp();
        (self.rate / (clipped_mean * (1.0 - self.rate))).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoisingExample {
    pub encoder_input: Vec<u32>,
    pub target: Vec<u32>,
    pub decoder_input: Vec<u32>,
}

/// Sentinel id `k` of a vocabulary of `vocab_size` ids.
pub fn sentinel_id(vocab_size: usize, k: usize) -> u32 {
    (vocab_size - NUM_SENTINELS + k) as u32
}

fn sentinel_index(vocab_size: usize, id: u32) -> Option<usize> {
    let first = vocab_size - NUM_SENTINELS;
    let id = id as usize;
    (id >= first && id < vocab_size).then(|| id - first)
}

fn is_special(vocab_size: usize, id: u32) -> bool {
    id <= 2 || sentinel_index(vocab_size, id).is_some()
}

/// Samples `(start, len)` spans for a sequence of `n` tokens.
pub fn sample_spans(n: usize, cfg: &NoiseConfig, rng: &mut Rng) -> Result<Vec<(usize, usize)>, DenoiseError> {
    cfg.validate()?;
    let p = cfg.start_probability();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if p > 0.0 && rng.next_f64() < p {
            let len = (rng.poisson(cfg.mean_span).max(1) as usize).min(n - i);
            spans.push((i, len));
            i += len + 1;
        } else {
            i += 1;
        }
    }
    Ok(spans)
}

pub fn corrupt(ids: &[u32], vocab_size: usize, cfg: &NoiseConfig, seed: u64) -> Result<DenoisingExample, DenoiseError> {
    let mut rng = Rng::new(seed);
    let spans = sample_spans(ids.len(), cfg, &mut rng)?;
    corrupt_with_spans(ids, vocab_size, &spans)
}

/// Builds the example for an explicit span layout. Spans must be sorted,
/// in range and separated by at least one kept token.
pub fn corrupt_with_spans(ids: &[u32], vocab_size: usize, spans: &[(usize, usize)]) -> Result<DenoisingExample, DenoiseError> {
    if let Some(&bad) = ids.iter().find(|&&id| is_special(vocab_size, id)) {
        return Err(DenoiseError::SpecialId(bad));
    }
    if spans.len() > NUM_SENTINELS {
        return Err(DenoiseError::TooManySpans(spans.len()));
    }
    let mut prev_end: Option<usize> = None;
    for &(start, len) in spans {
        let overlaps = prev_end.is_some_and(|e| start <= e);
        if len == 0 || start + len > ids.len() || overlaps {
            return Err(DenoiseError::BadSpan { start, len });
        }
        prev_end = Some(start + len);
    }

    let mut encoder_input = Vec::with_capacity(ids.len() + 1);
    let mut target = Vec::new();
    let mut pos = 0;
    for (k, &(start, len)) in spans.iter().enumerate() {
        let s = sentinel_id(vocab_size, k);
        encoder_input.extend_from_slice(&ids[pos..start]);
        encoder_input.push(s);
        target.push(s);
        target.extend_from_slice(&ids[start..start + len]);
        pos = start + len;
    }
    encoder_input.extend_from_slice(&ids[pos..]);
    encoder_input.push(EOS_ID);
    target.push(EOS_ID);
    let decoder_input = shift_right(&target)?;
    Ok(DenoisingExample { encoder_input, target, decoder_input })
}

/// Splices the target spans back into the encoder input.
pub fn reconstruct(example: &DenoisingExample, vocab_size: usize) -> Result<Vec<u32>, DenoiseError> {
    let (Some((&EOS_ID, enc)), Some((&EOS_ID, tgt))) = (example.encoder_input.split_last(), example.target.split_last()) else {
        return Err(DenoiseError::SentinelMismatch);
    };

    // target: (sentinel_k content*)* with k = 0, 1, 2, ...
    let mut spans: Vec<&[u32]> = Vec::new();
    let mut i = 0;
    while i < tgt.len() {
        if sentinel_index(vocab_size, tgt[i]) != Some(spans.len()) {
            return Err(DenoiseError::SentinelMismatch);
        }
        let start = i + 1;
        let mut end = start;
        while end < tgt.len() && sentinel_index(vocab_size, tgt[end]).is_none() {
            end += 1;
        }
        spans.push(&tgt[start..end]);
        i = end;
    }

    let mut out = Vec::with_capacity(enc.len() + tgt.len());
    let mut next = 0;
    for &id in enc {
        match sentinel_index(vocab_size, id) {
            Some(k) if k == next && k < spans.len() => {
                out.extend_from_slice(spans[k]);
                next += 1;
            }
            Some(_) => return Err(DenoiseError::SentinelMismatch),
            None => out.push(id),
        }
    }
    if next != spans.len() {
        return Err(DenoiseError::SentinelMismatch);
    }
    Ok(out)
}

/// `[pad] + target[..len-1]`: the decoder sees the target one position late.
pub fn shift_right(target: &[u32]) -> Result<Vec<u32>, DenoiseError> {
    if target.is_empty() {
        return Err(DenoiseError::EmptyTarget);
    }
    let mut out = Vec::with_capacity(target.len());
    out.push(PAD_ID);
    out.extend_from_slice(&target[..target.len() - 1]);
    Ok(out)
}

// ---- shard format ----
//
// All integers little-endian.
//   magic        4 bytes  "JGSH"
//   version      u32      1
//   max_input    u32
//   max_target   u32
//   count        u64
//   count × { enc_len u32, enc ids u32×enc_len,
//             tgt_len u32, tgt ids u32×tgt_len,
//             dec_len u32, dec ids u32×dec_len }

pub const SHARD_MAGIC: &[u8; 4] = b"JGSH";
pub const SHARD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ShardError {
    #[error("not a shard file (bad magic)")]
    BadMagic,
    #[error("unsupported shard version {0}")]
    Version(u32),
    #[error("example {index} has length {len} above the header limit {limit}")]
    TooLong { index: usize, len: usize, limit: usize },
    #[error("truncated shard")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub max_input_len: u32,
    pub max_target_len: u32,
    pub examples: Vec<DenoisingExample>,
}

impl Shard {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ShardError> {
        for (index, ex) in self.examples.iter().enumerate() {
            let checks = [
                (ex.encoder_input.len(), self.max_input_len),
                (ex.target.len(), self.max_target_len),
                (ex.decoder_input.len(), self.max_target_len),
            ];
            for (len, limit) in checks {
                if len > limit as usize {
                    return Err(ShardError::TooLong { index, len, limit: limit as usize });
                }
            }
        }
        w.write_all(SHARD_MAGIC)?;
        w.write_all(&SHARD_VERSION.to_le_bytes())?;
        w.write_all(&self.max_input_len.to_le_bytes())?;
        w.write_all(&self.max_target_len.to_le_bytes())?;
        w.write_all(&(self.examples.len() as u64).to_le_bytes())?;
        for ex in &self.examples {
            for arr in [&ex.encoder_input, &ex.target, &ex.decoder_input] {
                w.write_all(&(arr.len() as u32).to_le_bytes())?;
                for id in arr.iter() {
                    w.write_all(&id.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ShardError> {
        fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ShardError> {
            r.read_exact(buf).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => ShardError::Truncated,
                _ => ShardError::Io(e),
            })
        }
        fn u32_<R: Read>(r: &mut R) -> Result<u32, ShardError> {
            let mut b = [0u8; 4];
            fill(r, &mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        fill(r, &mut magic)?;
        if &magic != SHARD_MAGIC {
            return Err(ShardError::BadMagic);
        }
        let version = u32_(r)?;
        if version != SHARD_VERSION {
            return Err(ShardError::Version(version));
        }
        let max_input_len = u32_(r)?;
        let max_target_len = u32_(r)?;
        let mut cnt = [0u8; 8];
        fill(r, &mut cnt)?;
        let count = u64::from_le_bytes(cnt);
        let mut examples = Vec::new();
        for _ in 0..count {
            let mut arrays: [Vec<u32>; 3] = Default::default();
            for (k, arr) in arrays.iter_mut().enumerate() {
                let len = u32_(r)? as usize;
                let limit = if k == 0 { max_input_len } else { max_target_len } as usize;
                if len > limit {
                    return Err(ShardError::TooLong { index: examples.len(), len, limit });
                }
                let mut raw = vec![0u8; len * 4];
                fill(r, &mut raw)?;
                *arr = raw.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            }
            let [encoder_input, target, decoder_input] = arrays;
            examples.push(DenoisingExample { encoder_input, target, decoder_input });
        }
        Ok(Shard { max_input_len, max_target_len, examples })
    }
}
