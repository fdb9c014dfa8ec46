//! Declarative experiment configuration (TOML).

use crate::models::{Family, OptimizerKind, PretextConfig, Schedule, TrainConfig};
use crate::prompts::PromptTemplates;
use crate::splits::{MaterializeOptions, DEFAULT_SEEDS};
use crate::tilegeom::{OverlapTarget, ShiftBounds, ShiftMode, TileOptions, TileRole};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub annotations: PathBuf,
    pub metadata: PathBuf,
    /// Directory image file names resolve against; defaults to the annotation file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileConfig {
    pub bounds: ShiftBounds,
    pub train_replicas: u32,
    pub eval_replicas: u32,
    pub train_shift: ShiftMode,
    pub eval_shift: ShiftMode,
    pub overlap_target: OverlapTarget,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            bounds: ShiftBounds::default(),
            train_replicas: TileRole::Train.default_replicas(),
            eval_replicas: TileRole::Eval.default_replicas(),
            train_shift: ShiftMode::Random,
            eval_shift: ShiftMode::Random,
            overlap_target: OverlapTarget::PositiveBox,
        }
    }
}

impl TileConfig {
    pub fn materialize_options(&self) -> MaterializeOptions {
        let opts = |role: TileRole, replicas: u32, shift_mode: ShiftMode| TileOptions {
            replicas,
            bounds: self.bounds,
            shift_mode,
            overlap_target: self.overlap_target,
            ..TileOptions::new(role, 0)
        };
        MaterializeOptions {
            train_tiles: opts(TileRole::Train, self.train_replicas, self.train_shift),
            eval_tiles: opts(TileRole::Eval, self.eval_replicas, self.eval_shift),
        }
    }
}

/// Per-family changes to the default training hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop_patience: Option<usize>,
    /// Applies to AdamW only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    /// Applies to the cosine schedule only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretext_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretext_learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretext_batch_size: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if self.early_stop_patience.is_some() {
            c.early_stop_patience = self.early_stop_patience;
        }
        if let (Some(v), OptimizerKind::AdamW { weight_decay }) = (self.weight_decay, &mut c.optimizer) {
            *weight_decay = v;
        }
        if let (Some(v), Schedule::CosineWithWarmup { warmup_fraction }) = (self.warmup_fraction, &mut c.schedule) {
            *warmup_fraction = v;
        }
        c
    }

    pub fn apply_pretext(&self, mut c: PretextConfig) -> PretextConfig {
        if let Some(v) = self.pretext_epochs {
            c.epochs = v;
        }
        if let Some(v) = self.pretext_learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.pretext_batch_size {
            c.batch_size = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetPaths,
    pub out_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
    #[serde(default)]
    pub tiles: TileConfig,
    #[serde(default)]
    pub prompts: PromptTemplates,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<Family, TrainOverrides>,
    /// Checkpoint directories whose trainable tensors replace the tiny
    /// initialization of a family.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub init_checkpoints: BTreeMap<Family, PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_families() -> Vec<Family> {
    Family::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetPaths, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset,
            out_dir: out_dir.into(),
            seeds: default_seeds(),
            families: default_families(),
            tiles: TileConfig::default(),
            prompts: PromptTemplates::default(),
            overrides: BTreeMap::new(),
            init_checkpoints: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Parse a file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut c = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut c.dataset.annotations);
        abs(&mut c.dataset.metadata);
        if let Some(r) = c.dataset.image_root.as_mut() {
            abs(r);
        }
        abs(&mut c.out_dir);
        for p in c.init_checkpoints.values_mut() {
            abs(p);
        }
        Ok(c)
    }

    /// Canonical TOML form.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_toml()).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed is required".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(ConfigError::Invalid(format!("duplicate seeds in {:?}", self.seeds)));
        }
        if self.families.is_empty() {
            return Err(ConfigError::Invalid("at least one model family is required".into()));
        }
        if self.tiles.train_replicas == 0 || self.tiles.eval_replicas == 0 {
            return Err(ConfigError::Invalid("replica counts must be at least 1".into()));
        }
        self.tiles
            .bounds
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.prompts
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (f, o) in &self.overrides {
            let c = self.train_config(*f);
            if c.batch_size == 0 || c.max_epochs == 0 || c.learning_rate.is_nan() || c.learning_rate < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "override for {f} gives unusable settings {c:?}"
                )));
            }
            if o.warmup_fraction.is_some_and(|w| !(0.0..=1.0).contains(&w)) {
                return Err(ConfigError::Invalid(format!(
                    "warmup fraction for {f} must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn train_config(&self, family: Family) -> TrainConfig {
        let base = family.default_train_config();
        match self.overrides.get(&family) {
            Some(o) => o.apply(base),
            None => base,
        }
    }

    pub fn pretext_config(&self, family: Family) -> Option<PretextConfig> {
        let base = family.default_pretext_config()?;
        Some(match self.overrides.get(&family) {
            Some(o) => o.apply_pretext(base),
            None => base,
        })
    }
}
