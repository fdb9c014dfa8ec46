//! Symmetric InfoNCE over cosine similarities, as used to train and finetune CLIP.

use super::{check_rows, dot, through_normalization, ObjectiveError};

/// `N` paired image/text embeddings. Rows need not be unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub image: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_image: Vec<Vec<f64>>,
    pub grad_text: Vec<Vec<f64>>,
}

/// `-(1/2N) [ Σ_i log softmax_j(s_ij)_i + Σ_i log softmax_j(s_ji)_i ]`
/// with `s_ij = cos(u_i, v_j) / τ`.
pub fn clip_symmetric_infonce(batch: &EmbeddingBatch) -> Result<f64, ObjectiveError> {
    clip_symmetric_infonce_with_grad(batch).map(|o| o.loss)
}

/// Loss plus its gradient with respect to the unnormalized image and text rows.
pub fn clip_symmetric_infonce_with_grad(batch: &EmbeddingBatch) -> Result<InfoNceOutput, ObjectiveError> {
    let tau = batch.temperature;
    if !tau.is_finite() || tau <= 0.0 {
        return Err(ObjectiveError::Temperature(tau));
    }
    let n = batch.image.len();
    if n < 2 {
        return Err(ObjectiveError::Shape(format!(
            "contrastive batch needs N >= 2, got {n}"
        )));
    }
    let d = batch.image[0].len();
    let u_norm = check_rows(&batch.image, "image embeddings", n, d)?;
    let v_norm = check_rows(&batch.text, "text embeddings", n, d)?;
    let unit = |rows: &[Vec<f64>], norms: &[f64]| -> Vec<Vec<f64>> {
        rows.iter()
            .zip(norms)
            .map(|(r, nrm)| r.iter().map(|x| x / nrm).collect())
            .collect()
    };
    let u = unit(&batch.image, &u_norm);
    let v = unit(&batch.text, &v_norm);

    let logits: Vec<Vec<f64>> = u
        .iter()
        .map(|ui| v.iter().map(|vj| dot(ui, vj) / tau).collect())
        .collect();

    // Row softmax (image -> texts) and column softmax (text -> images).
    let mut row_p = vec![vec![0.0; n]; n];
    let mut col_p = vec![vec![0.0; n]; n];
    let mut loss = 0.0;
    for i in 0..n {
        let m = logits[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits[i].iter().map(|s| (s - m).exp()).sum();
        loss -= logits[i][i] - m - z.ln();
        for j in 0..n {
            row_p[i][j] = (logits[i][j] - m).exp() / z;
        }
    }
    for j in 0..n {
        let m = (0..n).map(|i| logits[i][j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).map(|i| (logits[i][j] - m).exp()).sum();
        loss -= logits[j][j] - m - z.ln();
        for i in 0..n {
            col_p[i][j] = (logits[i][j] - m).exp() / z;
        }
    }
    let scale = 1.0 / (2.0 * n as f64);
    loss *= scale;

    // dL/ds_ij
    let g: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    scale * ((row_p[i][j] - delta) + (col_p[i][j] - delta))
                })
                .collect()
        })
        .collect();
    let mut grad_image = Vec::with_capacity(n);
    let mut grad_text = Vec::with_capacity(n);
    for i in 0..n {
        let mut gu = vec![0.0; d];
        for j in 0..n {
            for k in 0..d {
                gu[k] += g[i][j] * v[j][k] / tau;
            }
        }
        grad_image.push(through_normalization(&gu, &u[i], u_norm[i]));
    }
    for j in 0..n {
        let mut gv = vec![0.0; d];
        for i in 0..n {
            for k in 0..d {
                gv[k] += g[i][j] * u[i][k] / tau;
            }
        }
        grad_text.push(through_normalization(&gv, &v[j], v_norm[j]));
    }
    Ok(InfoNceOutput {
        loss,
        grad_image,
        grad_text,
    })
}
