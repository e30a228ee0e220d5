//! Token embedding, the frozen stub backbone, the linear head and the
//! class-weighted cross-entropy objective.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::{attention_inference, check_heads, AttentionParams};
use crate::fault::{self, BackwardOp};
use crate::ops::{linear, linear_backward, mean_pool_rows, softmax_in_place};
use crate::ted::{FeedForward, LayerNormParams};
use crate::tensor::{ParamSet, Parameter, Tensor, TensorError};

pub const EMBED_STD: f64 = 0.02;
pub const BACKBONE_LAYERS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("class {0} has no training samples; weights are undefined")]
    EmptyClass(usize),
    #[error("label {label} is outside 0..{classes}")]
    BadLabel { label: usize, classes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Hash-seeded embedding of one token string.
fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    let normal = Normal::new(0.0, EMBED_STD).expect("positive std");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// One row per token; identical strings share identical rows.
pub fn embed_tokens<S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64) -> Tensor {
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut data = Vec::with_capacity(tokens.len() * dim);
    for t in tokens {
        let row = cache.entry(t.as_ref()).or_insert_with(|| token_vector(t.as_ref(), dim, seed));
        data.extend_from_slice(row);
    }
    Tensor::matrix(tokens.len(), dim, data).expect("rows match token count")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub attn_norm: LayerNormParams,
    pub attn: AttentionParams,
    pub ffn_norm: LayerNormParams,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    /// Pre-norm block over all rows; outputs are kept only for the first `keep` rows.
    fn forward(&self, x: &Tensor, heads: usize, keep: usize) -> Result<Tensor, TensorError> {
        let (h, _) = self.attn_norm.forward(x)?;
        let queries = if keep == x.rows() { h.clone() } else { h.slice_rows(0, keep) };
        let mut y = x.slice_rows(0, keep);
        y.add_assign(&attention_inference(&self.attn, &queries, &h, heads)?)?;
        let (h2, _) = self.ffn_norm.forward(&y)?;
        let (f, _, _) = self.ffn.forward(&h2)?;
        y.add_assign(&f)?;
        Ok(y)
    }
}

/// Frozen stand-in for the language backbone: hash token embeddings and two
/// pre-norm encoder blocks without positional encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct StubBackbone {
    pub dim: usize,
    pub heads: usize,
    pub seed: u64,
    pub blocks: Vec<EncoderBlock>,
    pub final_norm: LayerNormParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub dim: usize,
    pub heads: usize,
    pub seed: u64,
}

impl StubBackbone {
    pub fn new(cfg: BackboneConfig) -> Result<Self, TensorError> {
        check_heads(cfg.dim, cfg.heads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.dim;
        let blocks = (0..BACKBONE_LAYERS)
            .map(|l| {
                let p = format!("backbone.layer{l}");
                EncoderBlock {
                    attn_norm: LayerNormParams::new(&format!("{p}.attn_norm"), d, false),
                    attn: AttentionParams::init(&format!("{p}.attn"), d, false, &mut rng),
                    ffn_norm: LayerNormParams::new(&format!("{p}.ffn_norm"), d, false),
                    ffn: FeedForward::init(&format!("{p}.ffn"), d, 4 * d, false, &mut rng),
                }
            })
            .collect();
        Ok(Self {
            dim: d,
            heads: cfg.heads,
            seed: cfg.seed,
            blocks,
            final_norm: LayerNormParams::new("backbone.final_norm", d, false),
        })
    }

    pub fn config(&self) -> BackboneConfig {
        BackboneConfig {
            dim: self.dim,
            heads: self.heads,
            seed: self.seed,
        }
    }

    /// Seed for the token embedding table.
    pub fn embed_seed(&self) -> u64 {
        gaitlab_core::derive_seed(self.seed, "token-embedding")
    }

    pub fn embed(&self, tokens: &[String]) -> Tensor {
        embed_tokens(tokens, self.dim, self.embed_seed())
    }

    /// Encodes `z` and returns the final hidden states of its first `keep` rows.
    pub fn encode_prefix(&self, z: &Tensor, keep: usize) -> Result<Tensor, TensorError> {
        let mut x = z.clone();
        let last = self.blocks.len() - 1;
        for (i, block) in self.blocks.iter().enumerate() {
            // Rows past `keep` only feed keys and values of the last block.
            let k = if i == last { keep } else { x.rows() };
            x = block.forward(&x, self.heads, k)?;
        }
        Ok(self.final_norm.forward(&x)?.0)
    }

    pub fn encode(&self, z: &Tensor) -> Result<Tensor, TensorError> {
        self.encode_prefix(z, z.rows())
    }

    /// SHA-256 over every parameter value, in visiting order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            h.update(p.name.as_bytes());
            for v in p.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl ParamSet for StubBackbone {
    fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([&b.attn_norm.gain, &b.attn_norm.bias]);
            out.extend(b.attn.params());
            out.extend([&b.ffn_norm.gain, &b.ffn_norm.bias]);
            out.extend([&b.ffn.w1, &b.ffn.b1, &b.ffn.w2, &b.ffn.b2]);
        }
        out.extend([&self.final_norm.gain, &self.final_norm.bias]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend([&mut b.attn_norm.gain, &mut b.attn_norm.bias]);
            out.extend(b.attn.params_mut());
            out.extend([&mut b.ffn_norm.gain, &mut b.ffn_norm.bias]);
            out.extend([&mut b.ffn.w1, &mut b.ffn.b1, &mut b.ffn.w2, &mut b.ffn.b2]);
        }
        out.extend([&mut self.final_norm.gain, &mut self.final_norm.bias]);
        out
    }
}

/// The fused input and the pooled visual representation.
#[derive(Debug, Clone)]
pub struct Fused {
    pub z_rows: usize,
    pub f_vlm: Tensor,
}

/// `Z_input = [V; E_bio]`; `f_vlm` is the mean over the first `T` output rows.
pub fn fuse_and_encode(v: &Tensor, e_bio: &Tensor, backbone: &StubBackbone) -> Result<Fused, TensorError> {
    if v.cols() != backbone.dim || (e_bio.rows() > 0 && e_bio.cols() != backbone.dim) || v.rows() == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "fuse_and_encode",
            left: v.shape().to_vec(),
            right: e_bio.shape().to_vec(),
        });
    }
    let t = v.rows();
    let z = if e_bio.rows() == 0 { v.clone() } else { Tensor::concat_rows(v, e_bio)? };
    let hidden = backbone.encode_prefix(&z, t)?;
    Ok(Fused {
        z_rows: z.rows(),
        f_vlm: mean_pool_rows(&hidden)?,
    })
}

/// `f_final = [f_vlm; f_temp]`; a disabled branch passes `None` and is zero-filled.
pub fn concat_final(f_vlm: Option<&Tensor>, f_temp: Option<&Tensor>, dim: usize) -> Result<Tensor, TensorError> {
    let mut out = vec![0.0; 2 * dim];
    for (offset, part) in [(0, f_vlm), (dim, f_temp)] {
        if let Some(p) = part {
            if p.len() != dim {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_final",
                    left: p.shape().to_vec(),
                    right: vec![dim],
                });
            }
            out[offset..offset + dim].copy_from_slice(p.data());
        }
    }
    Ok(Tensor::vector(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Parameter,
    pub b: Parameter,
}

impl HeadParams {
    pub fn init(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w: Parameter::new("head.w", Tensor::xavier(classes, 2 * dim, &mut rng), true),
            b: Parameter::new("head.b", Tensor::zeros(&[classes]), true),
        }
    }

    pub fn classes(&self) -> usize {
        self.b.tensor.len()
    }

    pub fn forward(&self, f_final: &Tensor) -> Result<Tensor, TensorError> {
        linear(f_final, &self.w.tensor, &self.b.tensor)
    }

    /// Returns parameter gradients and `d f_final`.
    pub fn backward(&self, f_final: &Tensor, dlogits: &Tensor) -> Result<(HeadParams, Tensor), TensorError> {
        let g = linear_backward(f_final, &self.w.tensor, dlogits)?;
        let grads = HeadParams {
            w: Parameter::new("head.w", g.dw, true),
            b: Parameter::new("head.b", g.db, true),
        };
        Ok((grads, g.dx))
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.scale_all(0.0);
        g
    }
}

impl ParamSet for HeadParams {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: Vec<f64>,
    pub total: u64,
    pub counts: Vec<u64>,
}

/// `w_k = N / (K · n_k)`.
pub fn class_weights(counts: &[u64]) -> Result<ClassWeights, FusionError> {
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(FusionError::EmptyClass(k));
    }
    let total: u64 = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(ClassWeights {
        w: counts.iter().map(|&n| total as f64 / (k * n as f64)).collect(),
        total,
        counts: counts.to_vec(),
    })
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let mut p = logits.clone();
    softmax_in_place(p.data_mut());
    p
}

/// `−w_y · log softmax(logits)_y`, computed through log-sum-exp.
pub fn weighted_ce(logits: &Tensor, label: usize, weights: &[f64]) -> Result<f64, FusionError> {
    let k = logits.len();
    if label >= k {
        return Err(FusionError::BadLabel { label, classes: k });
    }
    if weights.len() != k {
        return Err(TensorError::ShapeMismatch {
            op: "weighted_ce",
            left: vec![k],
            right: vec![weights.len()],
        }
        .into());
    }
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(-weights[label] * (logits.data()[label] - lse))
}

/// `d logits = w_y · (softmax − onehot_y)`.
pub fn weighted_ce_backward(logits: &Tensor, label: usize, weights: &[f64]) -> Result<Tensor, FusionError> {
    let k = logits.len();
    if label >= k {
        return Err(FusionError::BadLabel { label, classes: k });
    }
    let mut g = softmax(logits);
    g.data_mut()[label] -= 1.0;
    g.scale(weights[label]);
    fault::apply(BackwardOp::WeightedCe, &mut g);
    Ok(g)
}
