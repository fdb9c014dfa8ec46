//! Symmetrized negative-cosine loss with stop-gradient on the projections.

use super::{check_rows, dot, through_normalization, ObjectiveError};

/// Predictions `p1, p2` and projections `z1, z2` for two views of the same inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseBatch {
    pub p1: Vec<Vec<f64>>,
    pub p2: Vec<Vec<f64>>,
    pub z1: Vec<Vec<f64>>,
    pub z2: Vec<Vec<f64>>,
}

/// Gradients of the loss. The projections are stop-gradient targets, so `z1` and
/// `z2` are always exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseGrad {
    pub loss: f64,
    pub p1: Vec<Vec<f64>>,
    pub p2: Vec<Vec<f64>>,
    pub z1: Vec<Vec<f64>>,
    pub z2: Vec<Vec<f64>>,
}

/// `½ D(p1, sg(z2)) + ½ D(p2, sg(z1))`, `D(p, z) = -mean_i cos(p_i, z_i)`. Lies in [-1, 1].
pub fn simsiam_loss(batch: &SiameseBatch) -> Result<f64, ObjectiveError> {
    simsiam_loss_with_grad(batch).map(|g| g.loss)
}

pub fn simsiam_loss_with_grad(batch: &SiameseBatch) -> Result<SiameseGrad, ObjectiveError> {
    let n = batch.p1.len();
    if n == 0 {
        return Err(ObjectiveError::Shape("empty siamese batch".into()));
    }
    let d = batch.p1[0].len();
    if d == 0 {
        return Err(ObjectiveError::Shape("embedding width must be at least 1".into()));
    }
    let np1 = check_rows(&batch.p1, "p1", n, d)?;
    let np2 = check_rows(&batch.p2, "p2", n, d)?;
    let nz1 = check_rows(&batch.z1, "z1", n, d)?;
    let nz2 = check_rows(&batch.z2, "z2", n, d)?;

    // One half: -(1/2N) Σ cos(p_i, z_i) and its gradient with respect to p only.
    let half = |p: &[Vec<f64>], pn: &[f64], z: &[Vec<f64>], zn: &[f64]| -> (f64, Vec<Vec<f64>>) {
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let pu: Vec<f64> = p[i].iter().map(|x| x / pn[i]).collect();
            let zu: Vec<f64> = z[i].iter().map(|x| x / zn[i]).collect();
            loss -= dot(&pu, &zu);
            let g: Vec<f64> = zu.iter().map(|x| -x / (2.0 * n as f64)).collect();
            grads.push(through_normalization(&g, &pu, pn[i]));
        }
        (loss / (2.0 * n as f64), grads)
    };
    let (l1, g1) = half(&batch.p1, &np1, &batch.z2, &nz2);
    let (l2, g2) = half(&batch.p2, &np2, &batch.z1, &nz1);
    Ok(SiameseGrad {
        loss: l1 + l2,
        p1: g1,
        p2: g2,
        z1: vec![vec![0.0; d]; n],
        z2: vec![vec![0.0; d]; n],
    })
}
