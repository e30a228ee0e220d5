//! Multi-head scaled dot-product attention with exposed attention maps.

use rand::Rng;

use crate::fault::{self, BackwardOp};
use crate::ops::{linear, linear_backward, matmul, matmul_backward, matmul_bt, softmax_rows, softmax_rows_backward};
use crate::tensor::{mismatch, ParamSet, Parameter, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Parameter,
    pub bq: Parameter,
    pub wk: Parameter,
    pub bk: Parameter,
    pub wv: Parameter,
    pub bv: Parameter,
    pub wo: Parameter,
    pub bo: Parameter,
}

impl AttentionParams {
    pub fn init(prefix: &str, dim: usize, trainable: bool, rng: &mut impl Rng) -> Self {
        let w = |n: &str, rng: &mut _| Parameter::new(format!("{prefix}.{n}"), Tensor::xavier(dim, dim, rng), trainable);
        let b = |n: &str| Parameter::new(format!("{prefix}.{n}"), Tensor::zeros(&[dim]), trainable);
        Self {
            wq: w("wq", rng),
            bq: b("bq"),
            wk: w("wk", rng),
            bk: b("bk"),
            wv: w("wv", rng),
            bv: b("bv"),
            wo: w("wo", rng),
            bo: b("bo"),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.tensor.shape()[0]
    }
}

impl ParamSet for AttentionParams {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub heads: usize,
    pub xq: Tensor,
    pub xkv: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// One `m×n` row-stochastic matrix per head.
    pub maps: Vec<Tensor>,
    pub context: Tensor,
}

pub fn check_heads(dim: usize, heads: usize) -> Result<usize, TensorError> {
    if heads == 0 || dim % heads != 0 {
        return Err(TensorError::HeadDivisibility { dim, heads });
    }
    Ok(dim / heads)
}

/// Queries `xq: m×D` attend over `xkv: n×D`. Returns `m×D` output.
pub fn multi_head_attention(
    p: &AttentionParams,
    xq: &Tensor,
    xkv: &Tensor,
    heads: usize,
) -> Result<(Tensor, AttentionCache), TensorError> {
    let dim = p.dim();
    let dh = check_heads(dim, heads)?;
    if xq.cols() != dim || xkv.cols() != dim || xq.shape().len() != 2 || xkv.shape().len() != 2 {
        return Err(mismatch("multi_head_attention", xq.shape(), xkv.shape()));
    }
    let q = linear(xq, &p.wq.tensor, &p.bq.tensor)?;
    let k = linear(xkv, &p.wk.tensor, &p.bk.tensor)?;
    let v = linear(xkv, &p.wv.tensor, &p.bv.tensor)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut context = Tensor::zeros(&[xq.rows(), dim]);
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (q.columns(h * dh, dh), k.columns(h * dh, dh), v.columns(h * dh, dh));
        let mut scores = matmul_bt(&qh, &kh)?;
        scores.scale(scale);
        let a = softmax_rows(&scores);
        context.set_columns(h * dh, &matmul(&a, &vh)?);
        maps.push(a);
    }
    let out = linear(&context, &p.wo.tensor, &p.bo.tensor)?;
    let cache = AttentionCache {
        heads,
        xq: xq.clone(),
        xkv: xkv.clone(),
        q,
        k,
        v,
        maps,
        context,
    };
    Ok((out, cache))
}

/// Output rows only, without keeping activations.
pub fn attention_inference(p: &AttentionParams, xq: &Tensor, xkv: &Tensor, heads: usize) -> Result<Tensor, TensorError> {
    multi_head_attention(p, xq, xkv, heads).map(|(out, _)| out)
}

pub struct AttentionGrads {
    pub dxq: Tensor,
    pub dxkv: Tensor,
    pub params: AttentionParams,
}

pub fn multi_head_attention_backward(
    p: &AttentionParams,
    cache: &AttentionCache,
    dout: &Tensor,
) -> Result<AttentionGrads, TensorError> {
    let dim = p.dim();
    let heads = cache.heads;
    let dh = check_heads(dim, heads)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut grads = p.clone();
    grads.scale_all(0.0);

    let out_g = linear_backward(&cache.context, &p.wo.tensor, dout)?;
    grads.wo.tensor = out_g.dw;
    grads.bo.tensor = out_g.db;
    let dcontext = out_g.dx;

    let mut dq = Tensor::zeros(cache.q.shape());
    let mut dk = Tensor::zeros(cache.k.shape());
    let mut dv = Tensor::zeros(cache.v.shape());
    for h in 0..heads {
        let (qh, kh, vh) = (
            cache.q.columns(h * dh, dh),
            cache.k.columns(h * dh, dh),
            cache.v.columns(h * dh, dh),
        );
        let a = &cache.maps[h];
        let dctx = dcontext.columns(h * dh, dh);
        // context_h = A·V_h
        let (da, dvh) = matmul_backward(a, &vh, &dctx)?;
        let mut ds = softmax_rows_backward(a, &da)?;
        ds.scale(scale);
        // scores = Q_h·K_hᵀ
        let (dqh, dkt) = matmul_backward(&qh, &kh.transpose(), &ds)?;
        let dkh = dkt.transpose();
        dq.set_columns(h * dh, &dqh);
        dk.set_columns(h * dh, &dkh);
        dv.set_columns(h * dh, &dvh);
    }
    fault::apply(BackwardOp::Attention, &mut dq);
    fault::apply(BackwardOp::Attention, &mut dk);
    fault::apply(BackwardOp::Attention, &mut dv);

    let gq = linear_backward(&cache.xq, &p.wq.tensor, &dq)?;
    let gk = linear_backward(&cache.xkv, &p.wk.tensor, &dk)?;
    let gv = linear_backward(&cache.xkv, &p.wv.tensor, &dv)?;
    grads.wq.tensor = gq.dw;
    grads.bq.tensor = gq.db;
    grads.wk.tensor = gk.dw;
    grads.bk.tensor = gk.db;
    grads.wv.tensor = gv.dw;
    grads.bv.tensor = gv.db;
    let mut dxkv = gk.dx;
    dxkv.add_assign(&gv.dx)?;
    Ok(AttentionGrads {
        dxq: gq.dx,
        dxkv,
        params: grads,
    })
}
