//! Checkpoint directories: `config.json`, `weights.json` and `events.ndjson`.

use super::adapters::{build_adapter, Adapter, AdapterSpec};
use super::family::{Family, TrainConfig};
use super::params::ParamStore;
use super::pretext::TransferManifest;
use super::train::TrainEvent;
use super::ModelError;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const EVENTS_FILE: &str = "events.ndjson";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub family: Family,
    pub split_seed: u64,
    pub adapter: AdapterSpec,
    pub train: Option<TrainConfig>,
    pub transfer: Option<TransferManifest>,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
}

fn io(path: &Path, e: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(format!("{}: {e}", path.display()))
}

pub fn save_checkpoint(
    dir: &Path,
    config: &CheckpointConfig,
    params: &ParamStore,
    events: &[TrainEvent],
) -> Result<(), ModelError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| io(&p, e))
    };
    write(
        CONFIG_FILE,
        serde_json::to_string_pretty(config).map_err(|e| io(dir, e))? + "\n",
    )?;
    write(
        WEIGHTS_FILE,
        serde_json::to_string(params).map_err(|e| io(dir, e))? + "\n",
    )?;
    let mut ev = String::new();
    for e in events {
        ev.push_str(&serde_json::to_string(e).map_err(|e| io(dir, e))?);
        ev.push('\n');
    }
    write(EVENTS_FILE, ev)
}

pub fn load_config(dir: &Path) -> Result<CheckpointConfig, ModelError> {
    let p = dir.join(CONFIG_FILE);
    let s = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    serde_json::from_str(&s).map_err(|e| io(&p, e))
}

pub fn load_weights(dir: &Path) -> Result<ParamStore, ModelError> {
    let p = dir.join(WEIGHTS_FILE);
    let s = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    serde_json::from_str(&s).map_err(|e| io(&p, e))
}

pub fn load_events(dir: &Path) -> Result<Vec<TrainEvent>, ModelError> {
    let p = dir.join(EVENTS_FILE);
    let s = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io(&p, e)))
        .collect()
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointConfig, Box<dyn Adapter>), ModelError> {
    let cfg = load_config(dir)?;
    let adapter = build_adapter(&cfg.adapter, load_weights(dir)?)?;
    Ok((cfg, adapter))
}

/// Overwrite `adapter`'s trainable tensors with those stored in `dir`. Every
/// trainable tensor must be present with the same shape.
pub fn load_initial_weights(adapter: &mut dyn Adapter, dir: &Path) -> Result<usize, ModelError> {
    let stored = load_weights(dir)?;
    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    for (name, t) in &adapter.params().tensors {
        if !ParamStore::is_trainable(name) {
            continue;
        }
        match stored.tensors.get(name) {
            None => missing.push(name.clone()),
            Some(s) if s.shape != t.shape => {
                mismatched.push(format!("{name}: stored {:?} vs adapter {:?}", s.shape, t.shape))
            }
            Some(_) => {}
        }
    }
    if !missing.is_empty() || !mismatched.is_empty() {
        return Err(ModelError::Transfer { missing, mismatched });
    }
    let mut n = 0;
    for (name, t) in adapter.params_mut().tensors.iter_mut() {
        if ParamStore::is_trainable(name) {
            *t = stored.tensors[name].clone();
            n += 1;
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::adapters::TinyClassifier;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clf = TinyClassifier::new(9);
        let cfg = CheckpointConfig {
            family: Family::Resnet50Scratch,
            split_seed: 3,
            adapter: clf.spec(),
            train: Some(Family::Resnet50Scratch.default_train_config()),
            transfer: None,
            best_epoch: Some(2),
            best_val_f1: Some(0.5),
        };
        let events = vec![TrainEvent::Step {
            epoch: 1,
            step: 1,
            loss: 0.7,
            lr: 1e-4,
        }];
        save_checkpoint(dir.path(), &cfg, &clf.params, &events).unwrap();
        let (back, adapter) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(adapter.params(), &clf.params);
        assert_eq!(load_events(dir.path()).unwrap(), events);

        let mut other = TinyClassifier::new(10);
        assert_eq!(load_initial_weights(&mut other, dir.path()).unwrap(), 4);
        assert_eq!(other.params.get("head.w"), clf.params.get("head.w"));
    }
}
