//! Temporal evidence distillation: learnable motion queries decode over
//! position-augmented frame features and are mean-pooled into `f_temp`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{check_heads, multi_head_attention, multi_head_attention_backward, AttentionCache, AttentionParams};
use crate::ops::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, mean_pool_rows,
    mean_pool_rows_backward, LayerNormCache, LAYER_NORM_EPS,
};
use crate::tensor::{ParamSet, Parameter, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TedError {
    #[error("invalid TED config: {0}")]
    InvalidConfig(String),
    #[error("{frames} frames exceed the positional table of {max}")]
    TooManyFrames { frames: usize, max: usize },
    #[error("backward called without forward state")]
    MissingForwardState,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TedConfig {
    pub queries: usize,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn_mult: usize,
    /// Query self-attention sub-layer ahead of cross-attention.
    pub self_attention: bool,
}

impl Default for TedConfig {
    fn default() -> Self {
        Self {
            queries: 32,
            layers: 3,
            heads: 4,
            dim: 64,
            ffn_mult: 4,
            self_attention: true,
        }
    }
}

impl TedConfig {
    pub fn full_scale() -> Self {
        Self {
            dim: 2048,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TedError> {
        if self.queries == 0 || self.layers == 0 || self.heads == 0 || self.dim == 0 || self.ffn_mult == 0 {
            return Err(TedError::InvalidConfig(format!("all sizes must be positive: {self:?}")));
        }
        check_heads(self.dim, self.heads).map_err(|e| TedError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Closed-form trainable parameter count for a positional table of `t_max` rows.
    pub fn param_count(&self, t_max: usize) -> usize {
        let d = self.dim;
        let f = self.ffn_mult * d;
        let attn = 4 * (d * d + d);
        let norm = 2 * d;
        let ffn = d * f + f + f * d + d;
        let per_layer = if self.self_attention { 2 * attn + 3 * norm } else { attn + 2 * norm } + ffn;
        self.queries * d + t_max * d + self.layers * per_layer + norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Parameter,
    pub bias: Parameter,
}

impl LayerNormParams {
    pub fn new(prefix: &str, dim: usize, trainable: bool) -> Self {
        Self {
            gain: Parameter::new(format!("{prefix}.gain"), Tensor::full(&[dim], 1.0), trainable),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[dim]), trainable),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache), TensorError> {
        layer_norm(x, &self.gain.tensor, &self.bias.tensor, LAYER_NORM_EPS)
    }

    /// Accumulates parameter gradients into `grads` and returns `dx`.
    pub fn backward(&self, cache: &LayerNormCache, dy: &Tensor, grads: &mut Self) -> Result<Tensor, TensorError> {
        let g = layer_norm_backward(cache, &self.gain.tensor, dy)?;
        grads.gain.tensor.add_assign(&g.dgain)?;
        grads.bias.tensor.add_assign(&g.dbias)?;
        Ok(g.dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
}

impl FeedForward {
    pub fn init(prefix: &str, dim: usize, hidden: usize, trainable: bool, rng: &mut impl Rng) -> Self {
        Self {
            w1: Parameter::new(format!("{prefix}.w1"), Tensor::xavier(hidden, dim, rng), trainable),
            b1: Parameter::new(format!("{prefix}.b1"), Tensor::zeros(&[hidden]), trainable),
            w2: Parameter::new(format!("{prefix}.w2"), Tensor::xavier(dim, hidden, rng), trainable),
            b2: Parameter::new(format!("{prefix}.b2"), Tensor::zeros(&[dim]), trainable),
        }
    }

    /// Returns the output with the pre-activation and activation kept for backward.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor), TensorError> {
        let u = linear(x, &self.w1.tensor, &self.b1.tensor)?;
        let g = gelu(&u);
        let y = linear(&g, &self.w2.tensor, &self.b2.tensor)?;
        Ok((y, u, g))
    }

    pub fn backward(&self, x: &Tensor, u: &Tensor, g: &Tensor, dy: &Tensor, grads: &mut Self) -> Result<Tensor, TensorError> {
        let l2 = linear_backward(g, &self.w2.tensor, dy)?;
        grads.w2.tensor.add_assign(&l2.dw)?;
        grads.b2.tensor.add_assign(&l2.db)?;
        let du = gelu_backward(u, &l2.dx)?;
        let l1 = linear_backward(x, &self.w1.tensor, &du)?;
        grads.w1.tensor.add_assign(&l1.dw)?;
        grads.b1.tensor.add_assign(&l1.db)?;
        Ok(l1.dx)
    }

    fn params(&self) -> [&Parameter; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> [&mut Parameter; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TedBlock {
    pub self_norm: Option<LayerNormParams>,
    pub self_attn: Option<AttentionParams>,
    pub cross_norm: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ffn_norm: LayerNormParams,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TedParams {
    pub config: TedConfig,
    pub queries: Parameter,
    pub pos_emb: Parameter,
    pub blocks: Vec<TedBlock>,
    pub final_norm: LayerNormParams,
}

impl ParamSet for TedParams {
    fn params(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.queries, &self.pos_emb];
        for b in &self.blocks {
            if let (Some(n), Some(a)) = (&b.self_norm, &b.self_attn) {
                out.extend([&n.gain, &n.bias]);
                out.extend(a.params());
            }
            out.extend([&b.cross_norm.gain, &b.cross_norm.bias]);
            out.extend(b.cross_attn.params());
            out.extend([&b.ffn_norm.gain, &b.ffn_norm.bias]);
            out.extend(b.ffn.params());
        }
        out.extend([&self.final_norm.gain, &self.final_norm.bias]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.queries, &mut self.pos_emb];
        for b in &mut self.blocks {
            if let (Some(n), Some(a)) = (&mut b.self_norm, &mut b.self_attn) {
                out.extend([&mut n.gain, &mut n.bias]);
                out.extend(a.params_mut());
            }
            out.extend([&mut b.cross_norm.gain, &mut b.cross_norm.bias]);
            out.extend(b.cross_attn.params_mut());
            out.extend([&mut b.ffn_norm.gain, &mut b.ffn_norm.bias]);
            out.extend(b.ffn.params_mut());
        }
        out.extend([&mut self.final_norm.gain, &mut self.final_norm.bias]);
        out
    }
}

pub fn init_ted(config: TedConfig, t_max: usize, seed: u64) -> Result<TedParams, TedError> {
    config.validate()?;
    if t_max == 0 {
        return Err(TedError::InvalidConfig("positional table needs at least one row".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.dim;
    let queries = Parameter::new("ted.queries", Tensor::randn(&[config.queries, d], 0.02, &mut rng), true);
    let pos_emb = Parameter::new("ted.pos_emb", Tensor::randn(&[t_max, d], 0.02, &mut rng), true);
    let blocks = (0..config.layers)
        .map(|l| {
            let p = format!("ted.layer{l}");
            let (self_norm, self_attn) = if config.self_attention {
                (
                    Some(LayerNormParams::new(&format!("{p}.self_norm"), d, true)),
                    Some(AttentionParams::init(&format!("{p}.self_attn"), d, true, &mut rng)),
                )
            } else {
                (None, None)
            };
            TedBlock {
                self_norm,
                self_attn,
                cross_norm: LayerNormParams::new(&format!("{p}.cross_norm"), d, true),
                cross_attn: AttentionParams::init(&format!("{p}.cross_attn"), d, true, &mut rng),
                ffn_norm: LayerNormParams::new(&format!("{p}.ffn_norm"), d, true),
                ffn: FeedForward::init(&format!("{p}.ffn"), d, config.ffn_mult * d, true, &mut rng),
            }
        })
        .collect();
    Ok(TedParams {
        config,
        queries,
        pos_emb,
        blocks,
        final_norm: LayerNormParams::new("ted.final_norm", d, true),
    })
}

impl TedParams {
    pub fn t_max(&self) -> usize {
        self.pos_emb.tensor.rows()
    }

    /// Zero gradient container with the same structure.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.scale_all(0.0);
        g
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    self_in: Option<(LayerNormCache, AttentionCache)>,
    cross_ln: LayerNormCache,
    cross: AttentionCache,
    ffn_in: Tensor,
    ffn_ln: LayerNormCache,
    ffn_u: Tensor,
    ffn_g: Tensor,
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct TedCache {
    frames: usize,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
    pub q_out: Tensor,
}

impl TedCache {
    /// Cross-attention maps per layer, each a list of per-head `M×T` matrices.
    pub fn cross_attention_maps(&self) -> Vec<&[Tensor]> {
        self.blocks.iter().map(|b| b.cross.maps.as_slice()).collect()
    }

    pub fn self_attention_maps(&self) -> Vec<&[Tensor]> {
        self.blocks
            .iter()
            .filter_map(|b| b.self_in.as_ref().map(|(_, c)| c.maps.as_slice()))
            .collect()
    }
}

/// `f_temp = MeanPool(TransformerDecoder(Q, V + P[0..T]))`.
pub fn ted_forward(params: &TedParams, v: &Tensor) -> Result<(Tensor, TedCache), TedError> {
    let cfg = &params.config;
    let t = v.rows();
    if v.shape().len() != 2 || v.cols() != cfg.dim || t == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "ted_forward",
            left: v.shape().to_vec(),
            right: vec![params.t_max(), cfg.dim],
        }
        .into());
    }
    if t > params.t_max() {
        return Err(TedError::TooManyFrames {
            frames: t,
            max: params.t_max(),
        });
    }
    let memory = v.add(&params.pos_emb.tensor.slice_rows(0, t))?;
    let mut x = params.queries.tensor.clone();
    let mut caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let self_in = match (&block.self_norm, &block.self_attn) {
            (Some(norm), Some(attn)) => {
                let (h, ln) = norm.forward(&x)?;
                let (a, c) = multi_head_attention(attn, &h, &h, cfg.heads)?;
                x.add_assign(&a)?;
                Some((ln, c))
            }
            _ => None,
        };
        let (h, cross_ln) = block.cross_norm.forward(&x)?;
        let (a, cross) = multi_head_attention(&block.cross_attn, &h, &memory, cfg.heads)?;
        x.add_assign(&a)?;
        let (h, ffn_ln) = block.ffn_norm.forward(&x)?;
        let (y, ffn_u, ffn_g) = block.ffn.forward(&h)?;
        let ffn_in = h;
        x.add_assign(&y)?;
        caches.push(BlockCache {
            self_in,
            cross_ln,
            cross,
            ffn_in,
            ffn_ln,
            ffn_u,
            ffn_g,
        });
    }
    let (q_out, final_ln) = params.final_norm.forward(&x)?;
    let f_temp = mean_pool_rows(&q_out)?;
    Ok((
        f_temp,
        TedCache {
            frames: t,
            blocks: caches,
            final_ln,
            q_out,
        },
    ))
}

/// Gradients for every TED parameter and for the frame features `V`.
pub fn ted_backward(params: &TedParams, cache: Option<&TedCache>, df_temp: &Tensor) -> Result<(TedParams, Tensor), TedError> {
    let cache = cache.ok_or(TedError::MissingForwardState)?;
    if cache.blocks.len() != params.blocks.len() {
        return Err(TedError::MissingForwardState);
    }
    let mut grads = params.zeros_like();
    let m = params.config.queries;
    let dq_out = mean_pool_rows_backward(m, df_temp);
    let mut dx = params.final_norm.backward(&cache.final_ln, &dq_out, &mut grads.final_norm)?;
    let mut dmemory = Tensor::zeros(&[cache.frames, params.config.dim]);
    for (l, (block, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let gb = &mut grads.blocks[l];
        // FFN residual.
        let dh = block.ffn.backward(&bc.ffn_in, &bc.ffn_u, &bc.ffn_g, &dx, &mut gb.ffn)?;
        dx.add_assign(&block.ffn_norm.backward(&bc.ffn_ln, &dh, &mut gb.ffn_norm)?)?;
        // Cross-attention residual.
        let ag = multi_head_attention_backward(&block.cross_attn, &bc.cross, &dx)?;
        gb.cross_attn.accumulate(&ag.params);
        dmemory.add_assign(&ag.dxkv)?;
        dx.add_assign(&block.cross_norm.backward(&bc.cross_ln, &ag.dxq, &mut gb.cross_norm)?)?;
        // Self-attention residual.
        if let (Some(norm), Some(attn), Some((ln, ac))) = (&block.self_norm, &block.self_attn, &bc.self_in) {
            let sg = multi_head_attention_backward(attn, ac, &dx)?;
            let mut dh = sg.dxq;
            dh.add_assign(&sg.dxkv)?;
            if let (Some(gn), Some(ga)) = (gb.self_norm.as_mut(), gb.self_attn.as_mut()) {
                ga.accumulate(&sg.params);
                dx.add_assign(&norm.backward(ln, &dh, gn)?)?;
            }
        }
    }
    grads.queries.tensor = dx;
    for i in 0..cache.frames {
        grads.pos_emb.tensor.row_mut(i).copy_from_slice(dmemory.row(i));
    }
    Ok((grads, dmemory))
}
