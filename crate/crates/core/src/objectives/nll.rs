//! Autoregressive language-modelling loss over target tokens.

use super::ObjectiveError;

/// Log-probabilities the model assigned to each realized target token, one
/// vector per sample. Padding and question tokens are simply not present.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub token_log_probs: Vec<Vec<f64>>,
}

impl TokenBatch {
    pub fn lengths(&self) -> Vec<usize> {
        self.token_log_probs.iter().map(Vec::len).collect()
    }

    fn validate(&self) -> Result<usize, ObjectiveError> {
        let mut tokens = 0;
        for (i, seq) in self.token_log_probs.iter().enumerate() {
            if seq.is_empty() {
                return Err(ObjectiveError::EmptySequence(i));
            }
            for (t, &lp) in seq.iter().enumerate() {
                if lp.is_nan() {
                    return Err(ObjectiveError::NonFinite("token log-probabilities"));
                }
                if lp > 0.0 {
                    return Err(ObjectiveError::PositiveLogProb {
                        sample: i,
                        step: t,
                        value: lp,
                    });
                }
            }
            tokens += seq.len();
        }
        Ok(tokens)
    }
}

/// `-Σ_i Σ_t log p(y_it | y_i,<t, x_i)`, summed over samples and target steps.
pub fn autoregressive_nll(batch: &TokenBatch) -> Result<f64, ObjectiveError> {
    batch.validate()?;
    Ok(-batch.token_log_probs.iter().flatten().sum::<f64>())
}

/// The summed loss divided by the number of target tokens.
pub fn autoregressive_nll_mean(batch: &TokenBatch) -> Result<f64, ObjectiveError> {
    let tokens = batch.validate()?;
    if tokens == 0 {
        return Ok(0.0);
    }
    Ok(autoregressive_nll(batch)? / tokens as f64)
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Per-step vocabulary logits for one sample together with the realized tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSequence {
    pub logits: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllOutput {
    pub loss: f64,
    /// dL/dlogits with the same layout as the input.
    pub grad_logits: Vec<Vec<Vec<f64>>>,
    pub tokens: usize,
}

/// Summed NLL computed from raw logits, with its gradient (`softmax - onehot` per step).
pub fn nll_from_logits(samples: &[LogitSequence]) -> Result<NllOutput, ObjectiveError> {
    let mut log_probs = Vec::with_capacity(samples.len());
    let mut grads = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.logits.len() != s.targets.len() {
            return Err(ObjectiveError::Shape(format!(
                "sample {i}: {} logit steps for {} targets",
                s.logits.len(),
                s.targets.len()
            )));
        }
        let mut seq = Vec::with_capacity(s.targets.len());
        let mut seq_grad = Vec::with_capacity(s.targets.len());
        for (step, (&target, logits)) in s.targets.iter().zip(&s.logits).enumerate() {
            if target >= logits.len() {
                return Err(ObjectiveError::Shape(format!(
                    "sample {i}, step {step}: target {target} outside vocabulary of {}",
                    logits.len()
                )));
            }
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(ObjectiveError::NonFinite("logits"));
            }
            let lp = log_softmax(logits);
            seq.push(lp[target]);
            let mut g: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            g[target] -= 1.0;
            seq_grad.push(g);
        }
        log_probs.push(seq);
        grads.push(seq_grad);
    }
    let batch = TokenBatch {
        token_log_probs: log_probs,
    };
    let tokens = batch.validate()?;
    Ok(NllOutput {
        loss: autoregressive_nll(&batch)?,
        grad_logits: grads,
        tokens,
    })
}
