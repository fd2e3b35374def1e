//! Encoder-decoder transformer with relative position biases.
//!
//! Parameters live in one flat buffer; [`Layout`] maps array names to
//! offsets and shapes. Everything is generic over [`Scalar`] so the same code
//! trains in `f32` and is gradient-checked in `f64`.

mod linalg;
mod transformer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

pub use linalg::Scalar;
pub use transformer::{
    batch_loss, decode_hidden, encode, forward, greedy_decode, loss, loss_and_grad, relative_bucket, DecoderState,
    EncoderState, Logits, LossAndGrad,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Layers per stack.
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    #[serde(default = "default_buckets")]
    pub num_rel_buckets: usize,
    #[serde(default = "default_distance")]
    pub max_rel_distance: usize,
    /// Must be 0; kept so configs state it explicitly.
    #[serde(default)]
    pub dropout: f64,
}

fn default_buckets() -> usize {
    32
}

fn default_distance() -> usize {
    128
}

impl ModelConfig {
    /// Desk-scale preset used by training and acceptance runs.
    pub fn toy(vocab_size: usize) -> Self {
        Self::preset(2, 64, 4, 256, vocab_size)
    }

    pub fn base() -> Self {
        Self::preset(12, 768, 12, 3072, 32128)
    }

    pub fn large() -> Self {
        Self::preset(24, 1024, 16, 4096, 32128)
    }

    fn preset(num_layers: usize, d_model: usize, num_heads: usize, d_ff: usize, vocab_size: usize) -> Self {
        ModelConfig {
            num_layers,
            d_model,
            num_heads,
            d_ff,
            vocab_size,
            num_rel_buckets: default_buckets(),
            max_rel_distance: default_distance(),
            dropout: 0.0,
        }
    }

    pub fn d_kv(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!("d_model {} is not divisible by num_heads {}", self.d_model, self.num_heads));
        }
        // Bidirectional bucketing halves the buckets and needs an exact range of at least 1.
        if self.num_rel_buckets < 4 {
            return bad(format!("num_rel_buckets {} must be at least 4", self.num_rel_buckets));
        }
        if self.max_rel_distance < self.num_rel_buckets {
            return bad(format!(
                "max_rel_distance {} must be at least num_rel_buckets {}",
                self.max_rel_distance, self.num_rel_buckets
            ));
        }
        if self.dropout != 0.0 {
            return bad(format!("dropout {} is unsupported; use 0", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct AttnIdx {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct EncLayerIdx {
    pub attn_norm: usize,
    pub attn: AttnIdx,
    pub ffn_norm: usize,
    pub wi: usize,
    pub wo: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct DecLayerIdx {
    pub self_norm: usize,
    pub self_attn: AttnIdx,
    pub cross_norm: usize,
    pub cross_attn: AttnIdx,
    pub ffn_norm: usize,
    pub wi: usize,
    pub wo: usize,
}

/// Named arrays in buffer order.
///
/// | array | shape |
/// |---|---|
/// | `shared_embedding` | V × d |
/// | `{encoder,decoder}.rel_bias` | buckets × heads |
/// | `*.attn_norm`, `*.ffn_norm`, `*.final_norm`, `decoder.*.cross_norm` | d |
/// | `*.q`, `*.k`, `*.v`, `*.o` | d × d |
/// | `*.ffn.wi` | d × d_ff |
/// | `*.ffn.wo` | d_ff × d |
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    specs: Vec<ParamSpec>,
    total: usize,
    pub(crate) embedding: usize,
    pub(crate) enc_bias: usize,
    pub(crate) enc_layers: Vec<EncLayerIdx>,
    pub(crate) enc_final: usize,
    pub(crate) dec_bias: usize,
    pub(crate) dec_layers: Vec<DecLayerIdx>,
    pub(crate) dec_final: usize,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        let spec = ParamSpec { name, shape, offset };
        self.total += spec.len();
        self.specs.push(spec);
        offset
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            q: self.add(format!("{prefix}.q"), vec![d, d]),
            k: self.add(format!("{prefix}.k"), vec![d, d]),
            v: self.add(format!("{prefix}.v"), vec![d, d]),
            o: self.add(format!("{prefix}.o"), vec![d, d]),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let mut b = LayoutBuilder { specs: Vec::new(), total: 0 };
        let embedding = b.add("shared_embedding".into(), vec![cfg.vocab_size, d]);
        let enc_bias = b.add("encoder.rel_bias".into(), vec![cfg.num_rel_buckets, cfg.num_heads]);
        let enc_layers = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("encoder.layer{l}");
                EncLayerIdx {
                    attn_norm: b.add(format!("{p}.attn_norm"), vec![d]),
                    attn: b.attention(&format!("{p}.attn"), d),
                    ffn_norm: b.add(format!("{p}.ffn_norm"), vec![d]),
                    wi: b.add(format!("{p}.ffn.wi"), vec![d, f]),
                    wo: b.add(format!("{p}.ffn.wo"), vec![f, d]),
                }
            })
            .collect();
        let enc_final = b.add("encoder.final_norm".into(), vec![d]);
        let dec_bias = b.add("decoder.rel_bias".into(), vec![cfg.num_rel_buckets, cfg.num_heads]);
        let dec_layers = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("decoder.layer{l}");
                DecLayerIdx {
                    self_norm: b.add(format!("{p}.self_norm"), vec![d]),
                    self_attn: b.attention(&format!("{p}.self_attn"), d),
                    cross_norm: b.add(format!("{p}.cross_norm"), vec![d]),
                    cross_attn: b.attention(&format!("{p}.cross_attn"), d),
                    ffn_norm: b.add(format!("{p}.ffn_norm"), vec![d]),
                    wi: b.add(format!("{p}.ffn.wi"), vec![d, f]),
                    wo: b.add(format!("{p}.ffn.wo"), vec![f, d]),
                }
            })
            .collect();
        let dec_final = b.add("decoder.final_norm".into(), vec![d]);
        Ok(Layout { specs: b.specs, total: b.total, embedding, enc_bias, enc_layers, enc_final, dec_bias, dec_layers, dec_final })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

pub fn param_count(cfg: &ModelConfig) -> Result<usize, ModelError> {
    Ok(Layout::new(cfg)?.total())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_data(config: ModelConfig, data: Vec<T>) -> Result<Self, ModelError> {
        let layout = Layout::new(&config)?;
        if data.len() != layout.total() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} values for a layout of {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(ModelParams { config, layout, data })
    }

    pub fn array(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|s| &self.data[s.range()])
    }

    pub fn array_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }
}

/// Seeded initialization. Each array draws from its own stream, so values do
/// not depend on array order.
///
/// Norm gains start at 1. Other arrays are zero-mean normal with standard
/// deviation: embedding 1; query `(d·d_kv)^-1/2`; key, value and `wi`
/// `d^-1/2`; attention output `(heads·d_kv)^-1/2`; `wo` `d_ff^-1/2`;
/// relative bias `d^-1/2`.
pub fn init<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>, ModelError> {
    let layout = Layout::new(config)?;
    let d = config.d_model as f64;
    let dkv = config.d_kv() as f64;
    let mut data = vec![T::zero(); layout.total()];
    for (i, spec) in layout.specs().iter().enumerate() {
        let n = &spec.name;
        let std = if n.ends_with("norm") {
            None
        } else if n == "shared_embedding" {
            Some(1.0)
        } else if n.ends_with(".q") {
            Some((d * dkv).powf(-0.5))
        } else if n.ends_with(".o") {
            Some((config.num_heads as f64 * dkv).powf(-0.5))
        } else if n.ends_with(".wo") {
            Some((config.d_ff as f64).powf(-0.5))
        } else {
            Some(d.powf(-0.5))
        };
        let slot = &mut data[spec.range()];
        match std {
            None => slot.fill(T::one()),
            Some(s) => {
                let mut rng = Rng::derive(seed, &[i as u64]);
                for v in slot {
                    *v = T::from_f64(rng.normal() * s);
                }
            }
        }
    }
    Ok(ModelParams { config: config.clone(), layout, data })
}
