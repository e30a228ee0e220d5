//! Binary checkpoint: a magic line, one JSON header line, then little-endian
//! f64 payload addressed by the header's tensor table.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{BackboneConfig, ClassWeights, StubBackbone};
use crate::model::{GaitModel, ModelError};
use crate::optim::AdamW;
use crate::ted::TedConfig;
use crate::tensor::{ParamSet, Tensor};
use crate::trainer::{TrainConfig, Trainer};

pub const MAGIC: &[u8] = b"GAITCKPT1\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint payload is truncated or has trailing bytes")]
    Truncated,
    #[error("checkpoint lacks tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?}: stored shape {stored:?} does not match model shape {expected:?}")]
    Shape {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("backbone fingerprint {found} does not match recorded {recorded}")]
    BackboneMismatch { recorded: String, found: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything besides trainer state needed to rebuild inputs at eval time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub classes: Vec<String>,
    pub backbone: BackboneConfig,
    pub backbone_hash: String,
    /// Tokenizer config in its text form.
    pub tokenizer: String,
    /// Manifest the model was trained from, if read from disk.
    pub manifest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: RunMeta,
    pub trainer: Trainer,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f64 elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: RunMeta,
    train_config: TrainConfig,
    ted_config: TedConfig,
    t_max: usize,
    epoch: usize,
    loss_history: Vec<f64>,
    class_weights: ClassWeights,
    adam_step: u64,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Fails when `backbone` is not the one recorded at training time.
    pub fn verify_backbone(&self, backbone: &StubBackbone) -> Result<(), CheckpointError> {
        let found = backbone.fingerprint();
        if found != self.meta.backbone_hash {
            return Err(CheckpointError::BackboneMismatch {
                recorded: self.meta.backbone_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.trainer;
        let mut tensors = Vec::new();
        let mut payload: Vec<f64> = Vec::new();
        let mut push = |name: String, tensor: &Tensor| {
            tensors.push(TensorEntry {
                name,
                shape: tensor.shape().to_vec(),
                offset: payload.len(),
            });
            payload.extend_from_slice(tensor.data());
        };
        let params = t.model.params();
        for p in &params {
            push(p.name.clone(), &p.tensor);
        }
        for (i, p) in params.iter().enumerate().filter(|(_, p)| p.trainable) {
            push(format!("adam.m.{}", p.name), &t.optimizer.m[i]);
            push(format!("adam.v.{}", p.name), &t.optimizer.v[i]);
        }
        let header = Header {
            meta: self.meta.clone(),
            train_config: t.config,
            ted_config: t.model.ted.config,
            t_max: t.model.ted.t_max(),
            epoch: t.epoch,
            loss_history: t.loss_history.clone(),
            class_weights: t.weights.clone(),
            adam_step: t.optimizer.step,
            tensors,
        };
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
        out.push(b'\n');
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let rest = bytes.strip_prefix(MAGIC).ok_or(CheckpointError::BadMagic)?;
        let nl = rest.iter().position(|&b| b == b'\n').ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(&rest[..nl])?;
        let raw = &rest[nl + 1..];
        if raw.len() % 8 != 0 {
            return Err(CheckpointError::Truncated);
        }
        let payload: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let table: HashMap<&str, &TensorEntry> = header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
        let fetch = |name: &str, expected: &[usize]| -> Result<Vec<f64>, CheckpointError> {
            let e = table.get(name).ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
            if e.shape != expected {
                return Err(CheckpointError::Shape {
                    name: name.to_string(),
                    stored: e.shape.clone(),
                    expected: expected.to_vec(),
                });
            }
            let n: usize = e.shape.iter().product();
            payload
                .get(e.offset..e.offset + n)
                .map(<[f64]>::to_vec)
                .ok_or(CheckpointError::Truncated)
        };

        let cfg = header.train_config;
        let classes = header.meta.classes.len();
        let mut model = GaitModel::new(header.ted_config, header.t_max, classes, cfg.ablation, cfg.seed)?;
        let mut optimizer = AdamW::new(cfg.adamw(), &model);
        optimizer.step = header.adam_step;
        for (i, p) in model.params_mut().into_iter().enumerate() {
            let shape = p.tensor.shape().to_vec();
            p.tensor.data_mut().copy_from_slice(&fetch(&p.name, &shape)?);
            if p.trainable {
                optimizer.m[i].data_mut().copy_from_slice(&fetch(&format!("adam.m.{}", p.name), &shape)?);
                optimizer.v[i].data_mut().copy_from_slice(&fetch(&format!("adam.v.{}", p.name), &shape)?);
            }
        }
        Ok(Self {
            meta: header.meta,
            trainer: Trainer {
                config: cfg,
                model,
                optimizer,
                weights: header.class_weights,
                epoch: header.epoch,
                loss_history: header.loss_history,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
