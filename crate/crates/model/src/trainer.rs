//! Mini-batch AdamW training and evaluation over prepared samples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use gaitlab_core::stats::{accuracy, macro_f1, per_class_f1, ConfusionMatrix};
use gaitlab_core::{derive_seed, Taxonomy};

use crate::data::label_counts;
use crate::fusion::{class_weights, ClassWeights, FusionError};
use crate::model::{Ablation, GaitModel, ModelError, Sample};
use crate::optim::{clip_global_norm, global_norm, AdamW, AdamWConfig};
use crate::ted::TedConfig;
use crate::tensor::{ParamSet, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            lr: adam.lr,
            batch_size: 2,
            epochs: 40,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
            grad_clip: 1.0,
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("checkpoint has {checkpoint} classes but the taxonomy has {taxonomy}")]
    ClassMismatch { checkpoint: usize, taxonomy: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Stats(#[from] gaitlab_core::StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Trainable gradient norm before clipping.
    pub grad_norm: f64,
    /// Norm over every TED gradient entry, trainable or not.
    pub ted_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: Vec<StepReport>,
}

/// Full training state; everything needed to resume bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: GaitModel,
    pub optimizer: AdamW,
    pub weights: ClassWeights,
    /// Completed epochs.
    pub epoch: usize,
    pub loss_history: Vec<f64>,
}

impl Trainer {
    /// Class weights come from the label counts of `train`.
    pub fn new(
        config: TrainConfig,
        ted: TedConfig,
        t_max: usize,
        classes: usize,
        train: &[Sample],
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        let weights = class_weights(&label_counts(train.iter().map(|s| s.label), classes))?;
        let model = GaitModel::new(ted, t_max, classes, config.ablation, config.seed)?;
        let optimizer = AdamW::new(config.adamw(), &model);
        Ok(Self {
            config,
            model,
            optimizer,
            weights,
            epoch: 0,
            loss_history: Vec::new(),
        })
    }

    /// One optimizer update on the mean loss of `batch`.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<StepReport, TrainError> {
        let mut grads = self.model.zeros_like();
        let mut loss = 0.0;
        for sample in batch {
            let (l, g) = self.model.loss_and_grad(sample, &self.weights.w)?;
            loss += l;
            grads.accumulate(&g);
        }
        let inv = 1.0 / batch.len() as f64;
        grads.scale_all(inv);
        let ted_grad_norm = grads.ted.params().iter().map(|p| p.tensor.norm_sq()).sum::<f64>().sqrt();
        let grad_norm = clip_global_norm(&self.model, &mut grads, self.config.grad_clip);
        self.optimizer.step(&mut self.model, &grads)?;
        Ok(StepReport {
            loss: loss * inv,
            grad_norm,
            ted_grad_norm,
        })
    }

    /// Visiting order for `epoch`, a function of the seed and epoch only.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("epoch{epoch}")));
        order.shuffle(&mut rng);
        order
    }

    pub fn run_epoch(&mut self, train: &[Sample]) -> Result<EpochReport, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        let order = self.epoch_order(self.epoch, train.len());
        let mut steps = Vec::new();
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let report = self.step(&batch)?;
            total += report.loss * batch.len() as f64;
            steps.push(report);
        }
        self.epoch += 1;
        let mean_loss = total / train.len() as f64;
        self.loss_history.push(mean_loss);
        Ok(EpochReport {
            epoch: self.epoch,
            mean_loss,
            steps,
        })
    }

    /// Trains until `config.epochs` epochs have completed.
    pub fn fit(&mut self, train: &[Sample], mut on_epoch: impl FnMut(&EpochReport)) -> Result<(), TrainError> {
        while self.epoch < self.config.epochs {
            let report = self.run_epoch(train)?;
            on_epoch(&report);
        }
        Ok(())
    }

    /// Mean gradient norm of the trainable subset over `samples`, unclipped.
    pub fn gradient_norm(&self, samples: &[Sample]) -> Result<f64, TrainError> {
        let mut grads = self.model.zeros_like();
        for s in samples {
            grads.accumulate(&self.model.loss_and_grad(s, &self.weights.w)?.1);
        }
        grads.scale_all(1.0 / samples.len().max(1) as f64);
        Ok(global_norm(&self.model, &grads))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip_id: String,
    pub truth: String,
    pub predicted: String,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub predictions: Vec<ClipPrediction>,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

impl EvalReport {
    /// Mean F1 over the named classes.
    pub fn mean_f1_of(&self, classes: &[&str]) -> Option<f64> {
        let idx: Option<Vec<usize>> = classes
            .iter()
            .map(|c| self.classes.iter().position(|k| k == c))
            .collect();
        let idx = idx?;
        Some(idx.iter().map(|&i| self.per_class_f1[i]).sum::<f64>() / idx.len() as f64)
    }
}

/// First index of the largest probability.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(model: &GaitModel, samples: &[Sample], taxonomy: &Taxonomy) -> Result<EvalReport, TrainError> {
    if model.head.classes() != taxonomy.len() {
        return Err(TrainError::ClassMismatch {
            checkpoint: model.head.classes(),
            taxonomy: taxonomy.len(),
        });
    }
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let mut confusion = ConfusionMatrix::new(taxonomy.len());
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = model.probabilities(s)?.into_data();
        let predicted = argmax(&probs);
        confusion.add(s.label, predicted)?;
        predictions.push(ClipPrediction {
            clip_id: s.clip_id.clone(),
            truth: taxonomy.name(s.label).to_string(),
            predicted: taxonomy.name(predicted).to_string(),
            probabilities: probs,
        });
    }
    Ok(EvalReport {
        classes: taxonomy.classes().to_vec(),
        accuracy: accuracy(&confusion)?,
        macro_f1: macro_f1(&confusion)?,
        per_class_f1: per_class_f1(&confusion)?,
        confusion,
        predictions,
    })
}
