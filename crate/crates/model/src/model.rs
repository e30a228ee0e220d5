//! The trainable classifier: TED over frame features, concatenated with the
//! precomputed backbone representation, into a linear head.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fusion::{concat_final, softmax, weighted_ce, weighted_ce_backward, FusionError, HeadParams};
use crate::ted::{init_ted, ted_backward, ted_forward, TedCache, TedConfig, TedError, TedParams};
use crate::tensor::{ParamSet, Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoTed,
    NoBio,
    Neither,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoTed, Ablation::NoBio, Ablation::Neither];

    pub fn uses_ted(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoBio)
    }

    pub fn uses_bio(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoTed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoTed => "no_ted",
            Ablation::NoBio => "no_bio",
            Ablation::Neither => "neither",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ablation {s:?}; expected full, no_ted, no_bio or neither"))
    }
}

/// One clip ready for the trainable part of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    pub label: usize,
    /// Frame features `V`, `T×D`.
    pub frames: Tensor,
    /// Pooled backbone output for the clip's fused input.
    pub f_vlm: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitModel {
    pub ablation: Ablation,
    pub ted: TedParams,
    pub head: HeadParams,
}

impl ParamSet for GaitModel {
    fn params(&self) -> Vec<&Parameter> {
        let mut out = self.ted.params();
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.ted.params_mut();
        out.extend(self.head.params_mut());
        out
    }
}

/// Forward activations needed by `backward`.
pub struct ForwardState {
    pub f_temp: Option<Tensor>,
    pub f_final: Tensor,
    pub ted: Option<TedCache>,
    pub logits: Tensor,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Ted(#[from] TedError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

impl From<crate::tensor::TensorError> for ModelError {
    fn from(e: crate::tensor::TensorError) -> Self {
        ModelError::Fusion(e.into())
    }
}

impl GaitModel {
    /// TED parameters are frozen in arms that do not use the branch.
    pub fn new(ted_config: TedConfig, t_max: usize, classes: usize, ablation: Ablation, seed: u64) -> Result<Self, ModelError> {
        let mut ted = init_ted(ted_config, t_max, gaitlab_core::derive_seed(seed, "ted"))?;
        ted.set_trainable(ablation.uses_ted());
        let head = HeadParams::init(classes, ted_config.dim, gaitlab_core::derive_seed(seed, "head"));
        Ok(Self { ablation, ted, head })
    }

    pub fn dim(&self) -> usize {
        self.ted.config.dim
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.scale_all(0.0);
        g
    }

    pub fn forward(&self, sample: &Sample) -> Result<ForwardState, ModelError> {
        let (f_temp, ted) = if self.ablation.uses_ted() {
            let (f, c) = ted_forward(&self.ted, &sample.frames)?;
            (Some(f), Some(c))
        } else {
            (None, None)
        };
        let f_final = concat_final(Some(&sample.f_vlm), f_temp.as_ref(), self.dim())?;
        let logits = self.head.forward(&f_final)?;
        Ok(ForwardState {
            f_temp,
            f_final,
            ted,
            logits,
        })
    }

    pub fn probabilities(&self, sample: &Sample) -> Result<Tensor, ModelError> {
        Ok(softmax(&self.forward(sample)?.logits))
    }

    /// Loss and gradients for one sample. Disabled branches get zero gradients.
    pub fn loss_and_grad(&self, sample: &Sample, weights: &[f64]) -> Result<(f64, GaitModel), ModelError> {
        let state = self.forward(sample)?;
        let loss = weighted_ce(&state.logits, sample.label, weights)?;
        let dlogits = weighted_ce_backward(&state.logits, sample.label, weights)?;
        let (head_grads, df_final) = self.head.backward(&state.f_final, &dlogits)?;
        let mut grads = self.zeros_like();
        grads.head = head_grads;
        if let Some(cache) = state.ted.as_ref() {
            let d = self.dim();
            let df_temp = Tensor::vector(df_final.data()[d..].to_vec());
            let (ted_grads, _) = ted_backward(&self.ted, Some(cache), &df_temp)?;
            grads.ted = ted_grads;
        }
        Ok((loss, grads))
    }

    pub fn loss(&self, sample: &Sample, weights: &[f64]) -> Result<f64, ModelError> {
        let state = self.forward(sample)?;
        Ok(weighted_ce(&state.logits, sample.label, weights)?)
    }

    /// Values of trainable parameters, flattened in visiting order.
    pub fn trainable_flat(&self) -> Vec<f64> {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.tensor.data().iter().copied())
            .collect()
    }

    pub fn assign_trainable_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut().into_iter().filter(|p| p.trainable) {
            let n = p.tensor.len();
            p.tensor.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat vector length does not match trainable count");
    }

    /// Entries of `grads` at this model's trainable positions.
    pub fn trainable_grads_flat(&self, grads: &GaitModel) -> Vec<f64> {
        self.params()
            .iter()
            .zip(grads.params())
            .filter(|(p, _)| p.trainable)
            .flat_map(|(_, g)| g.tensor.data().iter().copied())
            .collect()
    }
}
