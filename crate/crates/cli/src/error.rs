use std::path::Path;

use gaitlab_core::{GaitError, ParseError, SplitError, StatsError, SynthError, TokenizerError, TypeError};
use gaitlab_model::ablation::AblationError;
use gaitlab_model::{CheckpointError, DataError, TrainError};
use gaitlab_review::{ServiceError, StoreError, StudyError};

/// A domain failure: the owning module's error name plus its message.
#[derive(Debug)]
pub struct CliError {
    pub name: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(name: &'static str, message: impl Into<String>) -> Self {
        Self {
            name,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("IoError", format!("{}: {e}", path.display()))
    }
}

macro_rules! named {
    ($($ty:ty => $name:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                Self::new($name, e.to_string())
            }
        })*
    };
}

named! {
    GaitError => "GaitError",
    ParseError => "ParseError",
    SplitError => "SplitError",
    StatsError => "StatsError",
    SynthError => "SynthError",
    TokenizerError => "TokenizerError",
    TypeError => "TypeError",
    AblationError => "AblationError",
    CheckpointError => "CheckpointError",
    DataError => "DataError",
    TrainError => "TrainError",
    StoreError => "StoreError",
    StudyError => "StudyError",
    serde_json::Error => "FormatError",
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        Self::new(e.name(), e.to_string())
    }
}
