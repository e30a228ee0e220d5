//! Core data model and pure algorithms for the gaitlab pipeline.

use sha2::{Digest, Sha256};

pub mod gait;
pub mod io;
pub mod split;
pub mod stats;
pub mod synth;
pub mod tokenizer;
pub mod types;
pub mod visual;

pub use gait::{GaitError, GaitEvents, GaitMetrics, SegmentLengths};
pub use io::ParseError;
pub use split::{SplitError, SplitManifest, SplitReport};
pub use stats::{ConfusionMatrix, LikertRecord, StatsError};
pub use synth::{SynthError, SynthSpec};
pub use tokenizer::{BioText, TokenizerConfig, TokenizerError};
pub use types::{
    ChannelSpec, ChannelTable, FeatureSequence, Manifest, ManifestRecord, SkelFrame, SkelSequence, SourceTag,
    Taxonomy, TypeError, SKEL_DIM, UNLABELED,
};

/// 64-bit seed derived from `sha256(seed_le ‖ key)`.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
