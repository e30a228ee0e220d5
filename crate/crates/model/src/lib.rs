//! Trainable temporal decoder, frozen fusion backbone, classifier head and
//! training loop, with hand-chained reverse passes.

pub mod ablation;
pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod fault;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod optim;
pub mod ted;
pub mod tensor;
pub mod trainer;

pub use checkpoint::{Checkpoint, CheckpointError, RunMeta};
pub use data::{load_clips, prepare_samples, training_tokenizer, DataError, LoadedClip};
pub use fusion::{class_weights, BackboneConfig, ClassWeights, FusionError, HeadParams, StubBackbone};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{Ablation, GaitModel, ModelError, Sample};
pub use optim::{AdamW, AdamWConfig};
pub use ted::{init_ted, ted_backward, ted_forward, TedConfig, TedError, TedParams};
pub use tensor::{ParamSet, Parameter, Tensor, TensorError};
pub use trainer::{evaluate, EvalReport, TrainConfig, TrainError, Trainer};
