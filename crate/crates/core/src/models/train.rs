//! Zero-shot scoring, prediction and the finetuning loop.

use super::adapters::{Adapter, AdapterKind, Example};
use super::family::TrainConfig;
use super::optim::Optimizer;
use super::params::softmax;
use super::ModelError;
use crate::eval::{f1_score, PredictionRecord};
use crate::prompts::{PromptBundle, PromptMode, PromptTemplates};
use crate::types::Label;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Score at exactly one half predicts the negative class.
pub fn label_from_score(score: f64) -> Label {
    if score > 0.5 {
        Label::Mitotic
    } else {
        Label::HardNegative
    }
}

/// Classify one tile from its two candidate prompts (positive first).
///
/// Scorers take a softmax over the two similarity logits; generative adapters
/// use `exp(ll_pos) / (exp(ll_pos) + exp(ll_neg))`.
pub fn zero_shot_classify(
    adapter: &dyn Adapter,
    features: &[f64],
    pair: &[PromptBundle; 2],
) -> Result<(Label, f64), ModelError> {
    let mode = pair[0].mode;
    let kind = adapter.contract().kind;
    if pair[1].mode != mode || pair[0].label != Label::Mitotic || pair[1].label != Label::HardNegative {
        return Err(ModelError::Shape(
            "prompt pair must hold the MITOTIC then HARD_NEGATIVE bundle of one mode".into(),
        ));
    }
    if !kind.supports(mode) {
        return Err(ModelError::ModeMismatch { kind, mode });
    }
    let score = match kind {
        AdapterKind::ImageTextScorer => {
            let s = adapter.score_texts(features, &[&pair[0].target_text, &pair[1].target_text])?;
            softmax(&s)[0]
        }
        _ => {
            let pos = adapter.log_likelihood(features, pair[0].question.as_deref(), &pair[0].target_text)?;
            let neg = adapter.log_likelihood(features, pair[1].question.as_deref(), &pair[1].target_text)?;
            1.0 / (1.0 + (neg - pos).exp())
        }
    };
    Ok((label_from_score(score), score))
}

/// Prediction record for one tile.
pub fn predict(
    adapter: &dyn Adapter,
    ex: &Example,
    templates: &PromptTemplates,
) -> Result<PredictionRecord, ModelError> {
    let contract = adapter.contract();
    let mut rec = PredictionRecord {
        tile_id: ex.tile_id.clone(),
        truth: ex.label,
        predicted: Label::HardNegative,
        score: 0.0,
        parse_ok: true,
        exact_match: None,
        generated: None,
    };
    if contract.kind == AdapterKind::ImageClassifier {
        let p = adapter.class_probs(&ex.features)?;
        rec.score = p[0];
        rec.predicted = label_from_score(p[0]);
        return Ok(rec);
    }
    let pair = ex.prompts.as_ref().ok_or(ModelError::MissingPrompts)?;
    let (label, score) = zero_shot_classify(adapter, &ex.features, pair)?;
    rec.predicted = label;
    rec.score = score;
    if contract.capabilities.generative_scoring {
        let mode = pair[0].mode;
        let text = adapter.generate(&ex.features, pair[0].question.as_deref())?;
        rec.parse_ok = templates.parse_prediction(mode, &text).1;
        if mode == PromptMode::BlipCompleteCaption {
            rec.exact_match = ex.target().map(|t| t.target_text == text);
        }
        rec.generated = Some(text);
    }
    Ok(rec)
}

/// Predictions for many tiles, fanned out across threads, in input order.
pub fn predict_all(
    adapter: &dyn Adapter,
    examples: &[Example],
    templates: &PromptTemplates,
) -> Result<Vec<PredictionRecord>, ModelError> {
    examples.par_iter().map(|ex| predict(adapter, ex, templates)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainEvent {
    Step {
        epoch: usize,
        step: usize,
        loss: f64,
        lr: f64,
    },
    Epoch {
        epoch: usize,
        mean_loss: f64,
        val_f1: Option<f64>,
    },
    Selected {
        epoch: usize,
        val_f1: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub epoch_losses: Vec<f64>,
    pub epoch_val_f1: Vec<f64>,
    pub events: Vec<TrainEvent>,
}

pub struct FinetuneData<'a> {
    pub train: &'a [Example],
    pub val: &'a [Example],
    pub templates: &'a PromptTemplates,
}

/// Split `n` shuffled indices into batches, folding a trailing singleton into
/// the previous batch so contrastive objectives always see `N >= 2`.
pub(crate) fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

pub(crate) fn check_finite(
    loss: f64,
    grads: &super::params::Grads,
    epoch: usize,
    step: usize,
) -> Result<(), ModelError> {
    if !loss.is_finite() || grads.values().flatten().any(|g| !g.is_finite()) {
        return Err(ModelError::Diverged { epoch, step, loss });
    }
    Ok(())
}

/// Train with the adapter's own objective and keep the epoch with the best
/// validation F1 (the earliest on ties).
pub fn finetune(
    adapter: &mut dyn Adapter,
    data: &FinetuneData<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FinetuneOutcome, ModelError> {
    if data.train.is_empty() {
        return Err(ModelError::EmptyPartition("train"));
    }
    if data.val.is_empty() {
        return Err(ModelError::EmptyPartition("val"));
    }
    let contract = adapter.contract();
    if !contract.capabilities.trainable {
        return Err(adapter.unsupported("finetune"));
    }
    if cfg.family.adapter_kind() != contract.kind {
        return Err(ModelError::Config(format!(
            "{} expects a {:?} adapter, got {:?}",
            cfg.family,
            cfg.family.adapter_kind(),
            contract.kind
        )));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate < 0.0 {
        return Err(ModelError::Config(format!(
            "batch size {}, epochs {} and learning rate {} must be positive",
            cfg.batch_size, cfg.max_epochs, cfg.learning_rate
        )));
    }
    let n = data.train.len();
    let steps_per_epoch = batches(&(0..n).collect::<Vec<_>>(), cfg.batch_size).len();
    let total_steps = steps_per_epoch * cfg.max_epochs;
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut events = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut epoch_val_f1 = Vec::new();
    let mut best: Option<(usize, f64, super::params::ParamStore)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batches(&order, cfg.batch_size) {
            step += 1;
            let exs: Vec<&Example> = batch.iter().map(|&i| &data.train[i]).collect();
            let (loss, grads) = adapter.batch_loss(&exs)?;
            check_finite(loss, &grads, epoch, step)?;
            let lr = cfg.schedule.lr_at(cfg.learning_rate, step, total_steps);
            opt.step(adapter.params_mut(), &grads, lr);
            loss_sum += loss * exs.len() as f64;
            seen += exs.len();
            events.push(TrainEvent::Step { epoch, step, loss, lr });
            log::debug!("{} epoch {epoch} step {step}: loss {loss:.6} lr {lr:.3e}", cfg.family);
        }
        let mean_loss = loss_sum / seen as f64;
        let preds = predict_all(&*adapter, data.val, data.templates)?;
        let f1 = f1_score(&preds);
        events.push(TrainEvent::Epoch {
            epoch,
            mean_loss,
            val_f1: Some(f1),
        });
        log::info!("{} epoch {epoch}: mean loss {mean_loss:.6}, val F1 {f1:.4}", cfg.family);
        epoch_losses.push(mean_loss);
        epoch_val_f1.push(f1);
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, adapter.params().clone()));
        }
        if let (Some(patience), Some((best_epoch, _, _))) = (cfg.early_stop_patience, best.as_ref()) {
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_f1, params) = best.expect("at least one epoch ran");
    *adapter.params_mut() = params;
    events.push(TrainEvent::Selected {
        epoch: best_epoch,
        val_f1: best_val_f1,
    });
    Ok(FinetuneOutcome {
        best_epoch,
        best_val_f1,
        epoch_losses,
        epoch_val_f1,
        events,
    })
}
