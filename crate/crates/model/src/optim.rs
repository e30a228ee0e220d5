//! AdamW with decoupled weight decay and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::tensor::{mismatch, ParamSet, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moments for each parameter in visiting order; frozen parameters keep
/// zero-length placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &impl ParamSet) -> Self {
        let zeros = |p: &&crate::tensor::Parameter| {
            if p.trainable {
                p.tensor.zeros_like()
            } else {
                Tensor::zeros(&[0])
            }
        };
        Self {
            config,
            step: 0,
            m: params.params().iter().map(zeros).collect(),
            v: params.params().iter().map(zeros).collect(),
        }
    }

    /// One update of every trainable parameter.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<(), TensorError> {
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let grads = grads.params();
        let mut params = params.params_mut();
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(mismatch("adamw_step", &[params.len()], &[grads.len()]));
        }
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = &grads[i].tensor;
            if g.shape() != p.tensor.shape() || self.m[i].shape() != p.tensor.shape() {
                return Err(mismatch("adamw_step", p.tensor.shape(), g.shape()));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, theta) in p.tensor.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                *theta -= c.lr * c.weight_decay * *theta;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// L2 norm over the trainable entries of `grads`, using `mask` for trainability.
pub fn global_norm<P: ParamSet>(mask: &P, grads: &P) -> f64 {
    mask.params()
        .iter()
        .zip(grads.params())
        .filter(|(p, _)| p.trainable)
        .map(|(_, g)| g.tensor.norm_sq())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so the trainable global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: ParamSet>(mask: &P, grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(mask, grads);
    if norm > max_norm {
        grads.scale_all(max_norm / norm);
    }
    norm
}
