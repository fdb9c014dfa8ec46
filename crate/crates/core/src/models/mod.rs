//! Adapter contracts, desk-scale model families and the training harness.
//!
//! The real encoders are replaced by small dense models over fixed tile
//! features so the full pipeline runs on a laptop CPU. Each one honours the
//! adapter contract of the family it stands in for.

mod adapters;
mod checkpoint;
mod family;
mod features;
mod optim;
mod params;
mod pretext;
mod train;

pub use adapters::{
    build_adapter, build_vocab, detokenize, hash_trigrams, hash_words, tokenize, Adapter, AdapterContract, AdapterKind,
    AdapterSpec, Capabilities, Example, TinyClassifier, TinyGenerative, TinyScorer, CLASSIFIER_HIDDEN,
};
pub use checkpoint::{
    load_checkpoint, load_config, load_events, load_initial_weights, load_weights, save_checkpoint, CheckpointConfig,
    CONFIG_FILE, EVENTS_FILE, WEIGHTS_FILE,
};
pub use family::{
    Family, Pretext, PretextConfig, TrainConfig, DEFAULT_MAX_EPOCHS, DEFAULT_PRETEXT_EPOCHS, DEFAULT_WEIGHT_DECAY,
};
pub use features::{extract_features, stain_pretext_example, Standardizer, FEATURE_DIM, STAIN_GRID};
pub use optim::{cosine_with_warmup, Optimizer, OptimizerKind, Schedule};
pub use params::{Grads, ParamStore, Tensor};
pub use pretext::{train_pretext, transfer_pretext_weights, PretextEncoder, TensorEntry, TransferManifest};
pub use train::{
    finetune, label_from_score, predict, predict_all, zero_shot_classify, FinetuneData, FinetuneOutcome, TrainEvent,
};

use crate::objectives::ObjectiveError;
use crate::prompts::PromptMode;
use thiserror::Error;

pub const DEVICE_ENV: &str = "MITOVL_DEVICE";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{kind:?} adapters do not support {op}")]
    Unsupported { kind: AdapterKind, op: &'static str },
    #[error("{kind:?} adapters cannot serve {mode:?} prompts")]
    ModeMismatch { kind: AdapterKind, mode: PromptMode },
    #[error("example has no prompt bundles")]
    MissingPrompts,
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("{0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("incompatible weights; missing {missing:?}, mismatched {mismatched:?}")]
    Transfer {
        missing: Vec<String>,
        mismatched: Vec<String>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("unsupported device {0:?}; only \"cpu\" is available")]
    Device(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Device {
    Cpu,
}

impl Device {
    /// Device named by the `MITOVL_DEVICE` environment variable (default `cpu`).
    pub fn from_env() -> Result<Self, ModelError> {
        Self::parse(std::env::var(DEVICE_ENV).ok().as_deref())
    }

    pub fn parse(name: Option<&str>) -> Result<Self, ModelError> {
        match name.map(str::trim) {
            None | Some("") => Ok(Device::Cpu),
            Some(s) if s.eq_ignore_ascii_case("cpu") => Ok(Device::Cpu),
            Some(other) => Err(ModelError::Device(other.to_string())),
        }
    }
}
