//! Self-supervised pretext encoders and backbone weight transfer.

use super::adapters::{set_normalizer, TinyClassifier, CLASSIFIER_HIDDEN};
use super::family::{Pretext, PretextConfig};
use super::features::{Standardizer, FEATURE_DIM, STAIN_GRID};
use super::optim::Optimizer;
use super::params::{relu, relu_backward, seeded_rng, ParamStore};
use super::train::{batches, check_finite, TrainEvent};
use super::ModelError;
use crate::objectives::{simsiam_loss_with_grad, SiameseBatch};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

const BACKBONE_PREFIX: &str = "backbone.";

/// Backbone plus pretext-only heads (projector and predictor, or decoder).
#[derive(Debug, Clone)]
pub struct PretextEncoder {
    pub pretext: Pretext,
    pub params: ParamStore,
}

impl PretextEncoder {
    pub fn new(pretext: Pretext, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::default();
        set_normalizer(&mut params, &Standardizer::identity(FEATURE_DIM));
        params.init_linear("backbone", CLASSIFIER_HIDDEN, FEATURE_DIM, &mut rng);
        match pretext {
            Pretext::SimSiam => {
                params.init_linear("projector", CLASSIFIER_HIDDEN, CLASSIFIER_HIDDEN, &mut rng);
                params.init_linear("predictor", CLASSIFIER_HIDDEN, CLASSIFIER_HIDDEN, &mut rng);
            }
            Pretext::StainPrediction => {
                params.init_linear(
                    "decoder",
                    (STAIN_GRID * STAIN_GRID) as usize,
                    CLASSIFIER_HIDDEN,
                    &mut rng,
                );
            }
        }
        Self { pretext, params }
    }

    fn backbone(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let xs = super::adapters::normalize(&self.params, x);
        let pre = self.params.linear("backbone").forward(&xs);
        let h = relu(&pre);
        (xs, pre, h)
    }

    /// SimSiam loss over view pairs and its gradient; targets are stop-gradient.
    pub fn simsiam_step(&self, pairs: &[&(Vec<f64>, Vec<f64>)]) -> Result<(f64, super::params::Grads), ModelError> {
        let proj = self.params.linear("projector");
        let pred = self.params.linear("predictor");
        let mut cache = Vec::new();
        let (mut p1, mut p2, mut z1, mut z2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (a, b) in pairs.iter().map(|p| (&p.0, &p.1)) {
            let va = self.backbone(a);
            let vb = self.backbone(b);
            let za = proj.forward(&va.2);
            let zb = proj.forward(&vb.2);
            p1.push(pred.forward(&za));
            p2.push(pred.forward(&zb));
            z1.push(za.clone());
            z2.push(zb.clone());
            cache.push((va, za, vb, zb));
        }
        let out = simsiam_loss_with_grad(&SiameseBatch { p1, p2, z1, z2 })?;
        let mut grads = self.params.zero_grads();
        for (i, ((va, za), (vb, zb))) in cache
            .into_iter()
            .map(|(va, za, vb, zb)| ((va, za), (vb, zb)))
            .enumerate()
        {
            for ((xs, pre, h), z, gp) in [(va, za, &out.p1[i]), (vb, zb, &out.p2[i])] {
                let gz = pred.backward(&z, gp, &mut grads);
                let gh = proj.backward(&h, &gz, &mut grads);
                let gpre = relu_backward(&pre, &gh);
                self.params.linear("backbone").backward(&xs, &gpre, &mut grads);
            }
        }
        Ok((out.loss, grads))
    }

    /// Mean-squared error of the pooled hematoxylin map predicted from eosin-only input.
    pub fn stain_step(&self, examples: &[&(Vec<f64>, Vec<f64>)]) -> Result<(f64, super::params::Grads), ModelError> {
        let dec = self.params.linear("decoder");
        let mut grads = self.params.zero_grads();
        let mut loss = 0.0;
        let denom = (examples.len() * dec.out) as f64;
        for (x, y) in examples.iter().map(|e| (&e.0, &e.1)) {
            if y.len() != dec.out {
                return Err(ModelError::Shape(format!(
                    "stain target has {} cells, expected {}",
                    y.len(),
                    dec.out
                )));
            }
            let (xs, pre, h) = self.backbone(x);
            let yhat = dec.forward(&h);
            let g: Vec<f64> = yhat.iter().zip(y).map(|(a, b)| 2.0 * (a - b) / denom).collect();
            loss += yhat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / denom;
            let gh = dec.backward(&h, &g, &mut grads);
            let gpre = relu_backward(&pre, &gh);
            self.params.linear("backbone").backward(&xs, &gpre, &mut grads);
        }
        Ok((loss, grads))
    }
}

/// Train a pretext encoder. For SimSiam each example is a pair of views; for
/// stain prediction it is (eosin-only features, pooled hematoxylin map).
pub fn train_pretext(
    examples: &[(Vec<f64>, Vec<f64>)],
    cfg: &PretextConfig,
    seed: u64,
) -> Result<(PretextEncoder, Vec<TrainEvent>), ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyPartition("pretext"));
    }
    let mut enc = PretextEncoder::new(cfg.pretext, seed);
    let inputs: Vec<Vec<f64>> = match cfg.pretext {
        Pretext::SimSiam => examples.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect(),
        Pretext::StainPrediction => examples.iter().map(|(a, _)| a.clone()).collect(),
    };
    set_normalizer(&mut enc.params, &Standardizer::fit(&inputs));
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut rng = seeded_rng(seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut events = Vec::new();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0;
        for batch in batches(&order, cfg.batch_size) {
            step += 1;
            let refs: Vec<&(Vec<f64>, Vec<f64>)> = batch.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = match cfg.pretext {
                Pretext::SimSiam => enc.simsiam_step(&refs)?,
                Pretext::StainPrediction => enc.stain_step(&refs)?,
            };
            check_finite(loss, &grads, epoch, step)?;
            opt.step(&mut enc.params, &grads, cfg.learning_rate);
            events.push(TrainEvent::Step {
                epoch,
                step,
                loss,
                lr: cfg.learning_rate,
            });
            sum += loss * refs.len() as f64;
            seen += refs.len();
        }
        events.push(TrainEvent::Epoch {
            epoch,
            mean_loss: sum / seen as f64,
            val_f1: None,
        });
    }
    Ok((enc, events))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub numel: usize,
}

/// Which classifier tensors came from the pretext encoder and which are fresh.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferManifest {
    pub copied: Vec<TensorEntry>,
    pub fresh: Vec<TensorEntry>,
    /// Pretext tensors outside the backbone, left behind.
    pub ignored: Vec<String>,
}

impl TransferManifest {
    pub fn copied_params(&self) -> usize {
        self.copied.iter().map(|e| e.numel).sum()
    }

    pub fn fresh_params(&self) -> usize {
        self.fresh.iter().map(|e| e.numel).sum()
    }
}

/// Copy every `backbone.*` tensor of `pretext` into `target`, leaving the head
/// and normalization buffers as they are.
pub fn transfer_pretext_weights(
    pretext: &ParamStore,
    target: &mut TinyClassifier,
) -> Result<TransferManifest, ModelError> {
    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    for (name, t) in &target.params.tensors {
        if !name.starts_with(BACKBONE_PREFIX) {
            continue;
        }
        match pretext.tensors.get(name) {
            None => missing.push(name.clone()),
            Some(src) if src.shape != t.shape => {
                mismatched.push(format!("{name}: pretext {:?} vs classifier {:?}", src.shape, t.shape))
            }
            Some(_) => {}
        }
    }
    if !missing.is_empty() || !mismatched.is_empty() {
        return Err(ModelError::Transfer { missing, mismatched });
    }
    let mut manifest = TransferManifest::default();
    for (name, t) in target.params.tensors.iter_mut() {
        let entry = TensorEntry {
            name: name.clone(),
            numel: t.numel(),
        };
        if name.starts_with(BACKBONE_PREFIX) {
            *t = pretext.tensors[name].clone();
            manifest.copied.push(entry);
        } else {
            manifest.fresh.push(entry);
        }
    }
    manifest.ignored = pretext
        .tensors
        .keys()
        .filter(|k| !k.starts_with(BACKBONE_PREFIX) && !k.starts_with("norm."))
        .cloned()
        .collect();
    Ok(manifest)
}
