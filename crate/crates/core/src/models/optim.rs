//! Optimizers and learning-rate schedules.

use super::params::{Grads, ParamStore};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum { momentum: f64 },
    AdamW { weight_decay: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Schedule {
    Constant,
    /// Linear warmup over `warmup_fraction` of all steps, then cosine decay to zero.
    CosineWithWarmup {
        warmup_fraction: f64,
    },
}

impl Schedule {
    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        match self {
            Schedule::Constant => 0,
            Schedule::CosineWithWarmup { warmup_fraction } => {
                ((warmup_fraction * total_steps as f64).round() as usize).min(total_steps)
            }
        }
    }

    /// Learning rate for the 1-based `step` of `total_steps`.
    pub fn lr_at(&self, peak: f64, step: usize, total_steps: usize) -> f64 {
        match self {
            Schedule::Constant => peak,
            Schedule::CosineWithWarmup { .. } => {
                cosine_with_warmup(peak, step, self.warmup_steps(total_steps), total_steps)
            }
        }
    }
}

pub fn cosine_with_warmup(peak: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if warmup > 0 && step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    0.5 * peak * (1.0 + (PI * progress).cos())
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        let t = self.t as f64;
        for (name, g) in grads {
            if !ParamStore::is_trainable(name) {
                continue;
            }
            let Some(p) = params.tensors.get_mut(name) else {
                continue;
            };
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            match self.kind {
                OptimizerKind::SgdMomentum { momentum } => {
                    for ((w, gi), mi) in p.data.iter_mut().zip(g).zip(m.iter_mut()) {
                        *mi = momentum * *mi + gi;
                        *w -= lr * *mi;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW { .. } => {
                    let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    let decay = match self.kind {
                        OptimizerKind::AdamW { weight_decay } => weight_decay,
                        _ => 0.0,
                    };
                    let bc1 = 1.0 - BETA1.powf(t);
                    let bc2 = 1.0 - BETA2.powf(t);
                    for (((w, gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                        *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                        let update = (*mi / bc1) / ((*vi / bc2).sqrt() + EPS);
                        *w -= lr * (update + decay * *w);
                    }
                }
            }
        }
    }
}
