//! The four-arm branch ablation over one cohort and split.

use std::time::Instant;

use gaitlab_core::synth::Cohort;
use gaitlab_core::{ChannelTable, SplitManifest, TokenizerConfig};
use serde::Serialize;

use crate::data::{prepare_samples, training_tokenizer, DataError, LoadedClip};
use crate::fusion::{BackboneConfig, StubBackbone};
use crate::model::{Ablation, Sample};
use crate::ted::TedConfig;
use crate::trainer::{evaluate, EvalReport, TrainConfig, TrainError, Trainer};

/// Class pairs separable only by cadence in the default cohort.
pub const RHYTHM_PAIR_CLASSES: [&str; 4] = ["Normal", "Exercise", "Abnormal", "DCM"];

#[derive(Debug, Clone)]
pub struct AblationSetup {
    pub ted: TedConfig,
    pub backbone: BackboneConfig,
    pub tokenizer: TokenizerConfig,
    pub train: TrainConfig,
    pub arms: Vec<Ablation>,
}

impl AblationSetup {
    pub fn desk(seed: u64) -> Self {
        let ted = TedConfig::default();
        Self {
            ted,
            backbone: BackboneConfig {
                dim: ted.dim,
                heads: ted.heads,
                seed,
            },
            tokenizer: training_tokenizer(),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            arms: Ablation::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmResult {
    pub ablation: Ablation,
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
    pub test: EvalReport,
    pub seconds: f64,
}

impl ArmResult {
    pub fn rhythm_pair_f1(&self) -> Option<f64> {
        self.test.mean_f1_of(&RHYTHM_PAIR_CLASSES)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

struct Variant {
    train: Vec<Sample>,
    test: Vec<Sample>,
}

/// Trains and evaluates every arm in `setup.arms`. Backbone outputs are
/// computed once per prompt variant and shared between arms.
pub fn run_ablation(
    cohort: &Cohort,
    split: &SplitManifest,
    setup: &AblationSetup,
    mut on_arm: impl FnMut(&ArmResult),
) -> Result<Vec<ArmResult>, AblationError> {
    let table = ChannelTable::skel46();
    let backbone = StubBackbone::new(setup.backbone).map_err(DataError::from)?;
    let train_clips = LoadedClip::from_cohort(cohort, &split.train)?;
    let test_clips = LoadedClip::from_cohort(cohort, &split.test)?;
    let t_max = train_clips
        .iter()
        .chain(&test_clips)
        .map(|c| c.features.rows())
        .max()
        .unwrap_or(1);
    let mut variants: [Option<Variant>; 2] = [None, None];
    let mut results = Vec::new();
    for &arm in &setup.arms {
        let slot = &mut variants[usize::from(arm.uses_bio())];
        if slot.is_none() {
            let prep = |clips: &[LoadedClip]| {
                prepare_samples(clips, &backbone, &table, &cohort.taxonomy, &setup.tokenizer, arm.uses_bio())
            };
            *slot = Some(Variant {
                train: prep(&train_clips)?,
                test: prep(&test_clips)?,
            });
        }
        let data = slot.as_ref().expect("variant prepared");
        let start = Instant::now();
        let cfg = TrainConfig {
            ablation: arm,
            ..setup.train
        };
        let mut trainer = Trainer::new(cfg, setup.ted, t_max, cohort.taxonomy.len(), &data.train)?;
        trainer.fit(&data.train, |_| {})?;
        let result = ArmResult {
            ablation: arm,
            train_accuracy: evaluate(&trainer.model, &data.train, &cohort.taxonomy)?.accuracy,
            test: evaluate(&trainer.model, &data.test, &cohort.taxonomy)?,
            loss_history: trainer.loss_history,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_arm(&result);
        results.push(result);
    }
    Ok(results)
}
