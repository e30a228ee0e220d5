//! Clip loading and per-clip precomputation of the frozen backbone output.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use gaitlab_core::io::{load_feature_sequence, parse_skeleton_sequence};
use gaitlab_core::synth::{feature_path_for, Cohort};
use gaitlab_core::tokenizer::{assemble_prompt, render_sequence, tokenize_and_truncate, BioText};
use gaitlab_core::{
    ChannelTable, FeatureSequence, Manifest, ManifestRecord, ParseError, SkelSequence, Taxonomy, TokenizerConfig,
    TokenizerError,
};
use thiserror::Error;

use crate::fusion::{fuse_and_encode, StubBackbone};
use crate::model::Sample;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("clip {0:?} is not in the manifest")]
    UnknownClip(String),
    #[error("clip {clip}: feature dim {found} does not match model dim {expected}")]
    FeatureDim { clip: String, found: usize, expected: usize },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A clip with its label resolved and both modalities in memory.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub record: ManifestRecord,
    pub label: usize,
    pub sequence: SkelSequence,
    pub features: FeatureSequence,
}

impl LoadedClip {
    pub fn from_cohort(cohort: &Cohort, ids: &[String]) -> Result<Vec<LoadedClip>, DataError> {
        ids.iter()
            .map(|id| {
                let clip = cohort
                    .clips
                    .iter()
                    .find(|c| &c.record.clip_id == id)
                    .ok_or_else(|| DataError::UnknownClip(id.clone()))?;
                Ok(LoadedClip {
                    label: cohort.taxonomy.index_of(&clip.record.label).expect("manifest labels are validated"),
                    record: clip.record.clone(),
                    sequence: clip.sequence.clone(),
                    features: clip.features.clone(),
                })
            })
            .collect()
    }
}

/// Reads the `.skel` and `.feat` files of `ids`; paths are relative to `root`.
pub fn load_clips(
    root: &Path,
    manifest: &Manifest,
    ids: &[String],
    table: &ChannelTable,
    taxonomy: &Taxonomy,
) -> Result<Vec<LoadedClip>, DataError> {
    ids.iter()
        .map(|id| {
            let record = manifest.get(id).ok_or_else(|| DataError::UnknownClip(id.clone()))?;
            let skel_path = root.join(&record.path);
            let feat_path = root.join(feature_path_for(&record.path));
            let sequence = parse_skeleton_sequence(open(&skel_path)?, table, taxonomy).map_err(|source| {
                DataError::Parse {
                    path: skel_path.clone(),
                    source,
                }
            })?;
            let features = load_feature_sequence(open(&feat_path)?, id).map_err(|source| DataError::Parse {
                path: feat_path.clone(),
                source,
            })?;
            Ok(LoadedClip {
                label: taxonomy.index_of(&record.label).expect("manifest labels are validated"),
                record: record.clone(),
                sequence,
                features,
            })
        })
        .collect()
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Tokenizer used for training prompts: the default template with integer
/// values, so value tokens recur across clips.
pub fn training_tokenizer() -> TokenizerConfig {
    TokenizerConfig {
        decimals: 0,
        ..TokenizerConfig::default()
    }
}

/// Prompt tokens of a clip: instruction, class definitions and, with `use_bio`,
/// the rendered frames sampled at the feature rows' positions.
pub fn prompt_tokens(
    clip: &LoadedClip,
    table: &ChannelTable,
    taxonomy: &Taxonomy,
    tokenizer: &TokenizerConfig,
    use_bio: bool,
) -> Result<Vec<String>, DataError> {
    let bio = if use_bio {
        let sampled = clip.sequence.sample_frames(clip.features.rows());
        render_sequence(&sampled, table, tokenizer)?
    } else {
        BioText::empty()
    };
    let prompt = assemble_prompt(&bio, taxonomy, tokenizer)?;
    Ok(tokenize_and_truncate(&prompt, usize::MAX))
}

pub fn frames_tensor(features: &FeatureSequence) -> Tensor {
    Tensor::matrix(features.rows(), features.dim(), features.values().to_vec()).expect("feature shape is validated")
}

/// Runs the frozen backbone once per clip.
pub fn prepare_samples(
    clips: &[LoadedClip],
    backbone: &StubBackbone,
    table: &ChannelTable,
    taxonomy: &Taxonomy,
    tokenizer: &TokenizerConfig,
    use_bio: bool,
) -> Result<Vec<Sample>, DataError> {
    let dim = backbone.config().dim;
    clips
        .iter()
        .map(|clip| {
            if clip.features.dim() != dim {
                return Err(DataError::FeatureDim {
                    clip: clip.record.clip_id.clone(),
                    found: clip.features.dim(),
                    expected: dim,
                });
            }
            let frames = frames_tensor(&clip.features);
            let tokens = prompt_tokens(clip, table, taxonomy, tokenizer, use_bio)?;
            let fused = fuse_and_encode(&frames, &backbone.embed(&tokens), backbone)?;
            Ok(Sample {
                clip_id: clip.record.clip_id.clone(),
                label: clip.label,
                frames,
                f_vlm: fused.f_vlm,
            })
        })
        .collect()
}

/// Per-class clip counts.
pub fn label_counts(labels: impl IntoIterator<Item = usize>, classes: usize) -> Vec<u64> {
    let mut counts = vec![0; classes];
    for l in labels {
        counts[l] += 1;
    }
    counts
}
