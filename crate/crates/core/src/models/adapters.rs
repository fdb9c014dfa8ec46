//! Adapter contract and the desk-scale models that implement it.

use super::features::{Standardizer, FEATURE_DIM};
use super::params::{relu, relu_backward, seeded_rng, softmax, Grads, ParamStore, Tensor};
use super::ModelError;
use crate::objectives::{
    clip_symmetric_infonce_with_grad, log_softmax, nll_from_logits, EmbeddingBatch, LogitSequence,
};
use crate::prompts::{PromptBundle, PromptMode};
use crate::types::Label;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdapterKind {
    ImageTextScorer,
    CaptionGenerator,
    VqaAnswerer,
    ImageClassifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub trainable: bool,
    pub generative_scoring: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterContract {
    pub kind: AdapterKind,
    pub capabilities: Capabilities,
}

impl AdapterKind {
    pub fn contract(self) -> AdapterContract {
        AdapterContract {
            kind: self,
            capabilities: Capabilities {
                trainable: true,
                generative_scoring: matches!(self, AdapterKind::CaptionGenerator | AdapterKind::VqaAnswerer),
            },
        }
    }

    pub fn supports(self, mode: PromptMode) -> bool {
        matches!(
            (self, mode),
            (AdapterKind::ImageTextScorer, PromptMode::ClipLabel)
                | (AdapterKind::CaptionGenerator, PromptMode::BlipBinaryCaption)
                | (AdapterKind::CaptionGenerator, PromptMode::BlipCompleteCaption)
                | (AdapterKind::VqaAnswerer, PromptMode::BlipVqa)
        )
    }
}

/// One training or evaluation tile as seen by an adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tile_id: String,
    pub label: Label,
    /// Raw (unstandardized) tile features.
    pub features: Vec<f64>,
    /// Prompt bundles for both labels, positive first. `None` for classifiers.
    pub prompts: Option<[PromptBundle; 2]>,
}

impl Example {
    pub fn target(&self) -> Option<&PromptBundle> {
        self.prompts
            .as_ref()
            .map(|p| if self.label.is_positive() { &p[0] } else { &p[1] })
    }
}

/// Everything needed to rebuild an adapter around a stored [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AdapterSpec {
    Classifier {
        hidden: usize,
    },
    Scorer {
        embed_dim: usize,
        text_dim: usize,
        temperature: f64,
    },
    Generative {
        kind: AdapterKind,
        vocab: Vec<String>,
    },
}

pub trait Adapter: Send + Sync {
    fn contract(&self) -> AdapterContract;
    fn spec(&self) -> AdapterSpec;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Similarity logits of one image against each candidate text.
    fn score_texts(&self, _features: &[f64], _texts: &[&str]) -> Result<Vec<f64>, ModelError> {
        Err(self.unsupported("score_texts"))
    }

    /// Log-likelihood of `target` given the image and optional question.
    fn log_likelihood(&self, _features: &[f64], _question: Option<&str>, _target: &str) -> Result<f64, ModelError> {
        Err(self.unsupported("log_likelihood"))
    }

    fn generate(&self, _features: &[f64], _question: Option<&str>) -> Result<String, ModelError> {
        Err(self.unsupported("generate"))
    }

    /// `[P(MITOTIC), P(HARD_NEGATIVE)]`.
    fn class_probs(&self, _features: &[f64]) -> Result<[f64; 2], ModelError> {
        Err(self.unsupported("class_probs"))
    }

    /// Loss and parameter gradients for one batch under the adapter's own objective.
    fn batch_loss(&self, batch: &[&Example]) -> Result<(f64, Grads), ModelError>;

    fn unsupported(&self, op: &'static str) -> ModelError {
        ModelError::Unsupported {
            kind: self.contract().kind,
            op,
        }
    }

    fn fit_normalizer(&mut self, rows: &[Vec<f64>]) {
        let s = Standardizer::fit(rows);
        set_normalizer(self.params_mut(), &s);
    }
}

pub(crate) fn set_normalizer(p: &mut ParamStore, s: &Standardizer) {
    p.insert(
        "norm.mean",
        Tensor {
            shape: vec![s.mean.len()],
            data: s.mean.clone(),
        },
    );
    p.insert(
        "norm.std",
        Tensor {
            shape: vec![s.std.len()],
            data: s.std.clone(),
        },
    );
}

pub(crate) fn normalize(p: &ParamStore, x: &[f64]) -> Vec<f64> {
    let s = Standardizer {
        mean: p.get("norm.mean").data.clone(),
        std: p.get("norm.std").data.clone(),
    };
    s.apply(x)
}

fn init_normalizer(p: &mut ParamStore) {
    set_normalizer(p, &Standardizer::identity(FEATURE_DIM));
}

/// Two-class image classifier: `Linear → ReLU` backbone and a linear head.
#[derive(Debug, Clone)]
pub struct TinyClassifier {
    pub params: ParamStore,
    pub hidden: usize,
}

pub const CLASSIFIER_HIDDEN: usize = 32;

impl TinyClassifier {
    pub fn new(seed: u64) -> Self {
        Self::with_hidden(seed, CLASSIFIER_HIDDEN)
    }

    pub fn with_hidden(seed: u64, hidden: usize) -> Self {
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::default();
        init_normalizer(&mut params);
        params.init_linear("backbone", hidden, FEATURE_DIM, &mut rng);
        params.init_linear("head", 2, hidden, &mut rng);
        Self { params, hidden }
    }

    pub fn from_params(params: ParamStore, hidden: usize) -> Self {
        Self { params, hidden }
    }

    fn logits(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let xs = normalize(&self.params, x);
        let pre = self.params.linear("backbone").forward(&xs);
        let h = relu(&pre);
        let out = self.params.linear("head").forward(&h);
        (xs, pre, h, out)
    }
}

fn class_index(label: Label) -> usize {
    if label.is_positive() {
        0
    } else {
        1
    }
}

impl Adapter for TinyClassifier {
    fn contract(&self) -> AdapterContract {
        AdapterKind::ImageClassifier.contract()
    }

    fn spec(&self) -> AdapterSpec {
        AdapterSpec::Classifier { hidden: self.hidden }
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn class_probs(&self, features: &[f64]) -> Result<[f64; 2], ModelError> {
        let p = softmax(&self.logits(features).3);
        Ok([p[0], p[1]])
    }

    fn batch_loss(&self, batch: &[&Example]) -> Result<(f64, Grads), ModelError> {
        let mut grads = self.params.zero_grads();
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for ex in batch {
            let (xs, pre, h, out) = self.logits(&ex.features);
            let lp = log_softmax(&out);
            let y = class_index(ex.label);
            loss -= lp[y];
            let mut g: Vec<f64> = lp.iter().map(|l| l.exp() / n).collect();
            g[y] -= 1.0 / n;
            let gh = self.params.linear("head").backward(&h, &g, &mut grads);
            let gpre = relu_backward(&pre, &gh);
            self.params.linear("backbone").backward(&xs, &gpre, &mut grads);
        }
        Ok((loss / n, grads))
    }
}

pub const TEXT_HASH_DIM: usize = 64;
pub const SCORER_EMBED_DIM: usize = 16;
pub const SCORER_TEMPERATURE: f64 = 0.07;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// L2-normalized bag of hashed character trigrams.
pub fn hash_trigrams(text: &str, dim: usize) -> Vec<f64> {
    let padded: Vec<char> = format!("^{}$", text.to_lowercase()).chars().collect();
    let mut v = vec![0.0; dim];
    for w in padded.windows(3) {
        let s: String = w.iter().collect();
        v[(fnv1a(s.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// L2-normalized bag of hashed lowercase words.
pub fn hash_words(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for w in text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        v[(fnv1a(w.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Dual-tower image/text scorer trained with symmetric InfoNCE.
#[derive(Debug, Clone)]
pub struct TinyScorer {
    pub params: ParamStore,
    pub embed_dim: usize,
    pub text_dim: usize,
    pub temperature: f64,
}

impl TinyScorer {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::default();
        init_normalizer(&mut params);
        params.init_linear("image", SCORER_EMBED_DIM, FEATURE_DIM, &mut rng);
        params.init_linear("text", SCORER_EMBED_DIM, TEXT_HASH_DIM, &mut rng);
        Self {
            params,
            embed_dim: SCORER_EMBED_DIM,
            text_dim: TEXT_HASH_DIM,
            temperature: SCORER_TEMPERATURE,
        }
    }

    pub fn from_params(params: ParamStore, embed_dim: usize, text_dim: usize, temperature: f64) -> Self {
        Self {
            params,
            embed_dim,
            text_dim,
            temperature,
        }
    }

    fn embed_image(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xs = normalize(&self.params, x);
        let u = self.params.linear("image").forward(&xs);
        (xs, u)
    }

    fn embed_text(&self, text: &str) -> (Vec<f64>, Vec<f64>) {
        let t = hash_trigrams(text, self.text_dim);
        let v = self.params.linear("text").forward(&t);
        (t, v)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, ModelError> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ModelError::Shape("zero-norm embedding".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

impl Adapter for TinyScorer {
    fn contract(&self) -> AdapterContract {
        AdapterKind::ImageTextScorer.contract()
    }

    fn spec(&self) -> AdapterSpec {
        AdapterSpec::Scorer {
            embed_dim: self.embed_dim,
            text_dim: self.text_dim,
            temperature: self.temperature,
        }
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn score_texts(&self, features: &[f64], texts: &[&str]) -> Result<Vec<f64>, ModelError> {
        let (_, u) = self.embed_image(features);
        texts
            .iter()
            .map(|t| Ok(cosine(&u, &self.embed_text(t).1)? / self.temperature))
            .collect()
    }

    fn batch_loss(&self, batch: &[&Example]) -> Result<(f64, Grads), ModelError> {
        let mut xs = Vec::with_capacity(batch.len());
        let mut ts = Vec::with_capacity(batch.len());
        let mut image = Vec::with_capacity(batch.len());
        let mut text = Vec::with_capacity(batch.len());
        for ex in batch {
            let target = ex.target().ok_or(ModelError::MissingPrompts)?;
            let (x, u) = self.embed_image(&ex.features);
            let (t, v) = self.embed_text(&target.target_text);
            xs.push(x);
            ts.push(t);
            image.push(u);
            text.push(v);
        }
        let out = clip_symmetric_infonce_with_grad(&EmbeddingBatch {
            image,
            text,
            temperature: self.temperature,
        })?;
        let mut grads = self.params.zero_grads();
        for (x, g) in xs.iter().zip(&out.grad_image) {
            self.params.linear("image").backward(x, g, &mut grads);
        }
        for (t, g) in ts.iter().zip(&out.grad_text) {
            self.params.linear("text").backward(t, g, &mut grads);
        }
        Ok((out.loss, grads))
    }
}

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const QUESTION_HASH_DIM: usize = 32;
pub const MAX_POSITIONS: usize = 8;
const FIELD_SEPARATOR: &str = ", ";

/// Split a caption or answer into field-level tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(FIELD_SEPARATOR).map(str::to_string).collect()
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(FIELD_SEPARATOR)
}

/// Vocabulary over every candidate target text: `<bos>`, `<eos>`, then tokens sorted.
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut toks: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
    toks.sort();
    toks.dedup();
    let mut vocab = vec![BOS.to_string(), EOS.to_string()];
    vocab.extend(toks.into_iter().filter(|t| t != BOS && t != EOS));
    vocab
}

/// Image-conditioned autoregressive decoder over field tokens. Every step sees
/// the image features, a hashed question, the previous token and the position,
/// and maps them linearly to vocabulary logits. Weights start at zero, so an
/// untrained model assigns equal likelihood to equal-length candidates.
#[derive(Debug, Clone)]
pub struct TinyGenerative {
    pub params: ParamStore,
    pub kind: AdapterKind,
    pub vocab: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TinyGenerative {
    pub fn new(kind: AdapterKind, vocab: Vec<String>) -> Result<Self, ModelError> {
        let mut params = ParamStore::default();
        init_normalizer(&mut params);
        let inp = FEATURE_DIM + QUESTION_HASH_DIM + vocab.len() + MAX_POSITIONS;
        params.init_linear_zero("decoder", vocab.len(), inp);
        Self::from_params(params, kind, vocab)
    }

    pub fn from_params(params: ParamStore, kind: AdapterKind, vocab: Vec<String>) -> Result<Self, ModelError> {
        if !matches!(kind, AdapterKind::CaptionGenerator | AdapterKind::VqaAnswerer) {
            return Err(ModelError::Unsupported {
                kind,
                op: "generative decoding",
            });
        }
        if vocab.len() < 3 || vocab[0] != BOS || vocab[1] != EOS {
            return Err(ModelError::Shape(
                "vocabulary must start with <bos>, <eos> and hold at least one token".into(),
            ));
        }
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self {
            params,
            kind,
            vocab,
            index,
        })
    }

    fn encode(&self, target: &str) -> Result<Vec<usize>, ModelError> {
        let mut ids = tokenize(target)
            .into_iter()
            .map(|t| self.index.get(&t).copied().ok_or(ModelError::UnknownToken(t)))
            .collect::<Result<Vec<_>, _>>()?;
        ids.push(1);
        if ids.len() > MAX_POSITIONS {
            return Err(ModelError::Shape(format!(
                "target {target:?} exceeds {MAX_POSITIONS} tokens"
            )));
        }
        Ok(ids)
    }

    fn step_input(&self, xs: &[f64], q: &[f64], prev: usize, pos: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_DIM + QUESTION_HASH_DIM + self.vocab.len() + MAX_POSITIONS);
        v.extend_from_slice(xs);
        v.extend_from_slice(q);
        v.extend((0..self.vocab.len()).map(|i| if i == prev { 1.0 } else { 0.0 }));
        v.extend((0..MAX_POSITIONS).map(|i| if i == pos { 1.0 } else { 0.0 }));
        v
    }

    fn question_vec(&self, question: Option<&str>) -> Vec<f64> {
        question.map_or_else(|| vec![0.0; QUESTION_HASH_DIM], |q| hash_words(q, QUESTION_HASH_DIM))
    }

    /// Step inputs and logits for teacher-forced decoding of `ids`.
    fn teacher_forced(&self, xs: &[f64], q: &[f64], ids: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let dec = self.params.linear("decoder");
        let mut inputs = Vec::with_capacity(ids.len());
        let mut logits = Vec::with_capacity(ids.len());
        let mut prev = 0;
        for (pos, &id) in ids.iter().enumerate() {
            let inp = self.step_input(xs, q, prev, pos);
            logits.push(dec.forward(&inp));
            inputs.push(inp);
            prev = id;
        }
        (inputs, logits)
    }
}

impl Adapter for TinyGenerative {
    fn contract(&self) -> AdapterContract {
        self.kind.contract()
    }

    fn spec(&self) -> AdapterSpec {
        AdapterSpec::Generative {
            kind: self.kind,
            vocab: self.vocab.clone(),
        }
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn log_likelihood(&self, features: &[f64], question: Option<&str>, target: &str) -> Result<f64, ModelError> {
        let ids = self.encode(target)?;
        let xs = normalize(&self.params, features);
        let (_, logits) = self.teacher_forced(&xs, &self.question_vec(question), &ids);
        Ok(ids.iter().zip(&logits).map(|(&id, l)| log_softmax(l)[id]).sum())
    }

    fn generate(&self, features: &[f64], question: Option<&str>) -> Result<String, ModelError> {
        let xs = normalize(&self.params, features);
        let q = self.question_vec(question);
        let dec = self.params.linear("decoder");
        let mut prev = 0;
        let mut out = Vec::new();
        for pos in 0..MAX_POSITIONS {
            let logits = dec.forward(&self.step_input(&xs, &q, prev, pos));
            // Never emit <bos>; ties go to the lowest index.
            let mut best = 1;
            for i in 2..logits.len() {
                if logits[i] > logits[best] {
                    best = i;
                }
            }
            if best == 1 {
                break;
            }
            out.push(self.vocab[best].clone());
            prev = best;
        }
        Ok(detokenize(&out))
    }

    fn batch_loss(&self, batch: &[&Example]) -> Result<(f64, Grads), ModelError> {
        let mut seqs = Vec::with_capacity(batch.len());
        let mut inputs = Vec::with_capacity(batch.len());
        for ex in batch {
            let target = ex.target().ok_or(ModelError::MissingPrompts)?;
            let ids = self.encode(&target.target_text)?;
            let xs = normalize(&self.params, &ex.features);
            let (inp, logits) = self.teacher_forced(&xs, &self.question_vec(target.question.as_deref()), &ids);
            seqs.push(LogitSequence { logits, targets: ids });
            inputs.push(inp);
        }
        let out = nll_from_logits(&seqs)?;
        let scale = 1.0 / out.tokens as f64;
        let mut grads = self.params.zero_grads();
        let dec = self.params.linear("decoder");
        for (steps, grad_steps) in inputs.iter().zip(&out.grad_logits) {
            for (inp, g) in steps.iter().zip(grad_steps) {
                let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
                dec.backward(inp, &g, &mut grads);
            }
        }
        Ok((out.loss * scale, grads))
    }
}

/// Rebuild an adapter from a stored spec and parameters.
pub fn build_adapter(spec: &AdapterSpec, params: ParamStore) -> Result<Box<dyn Adapter>, ModelError> {
    Ok(match spec {
        AdapterSpec::Classifier { hidden } => Box::new(TinyClassifier::from_params(params, *hidden)),
        AdapterSpec::Scorer {
            embed_dim,
            text_dim,
            temperature,
        } => Box::new(TinyScorer::from_params(params, *embed_dim, *text_dim, *temperature)),
        AdapterSpec::Generative { kind, vocab } => Box::new(TinyGenerative::from_params(params, *kind, vocab.clone())?),
    })
}
