//! Training objectives and pretext transforms, independent of any model adapter.

mod infonce;
mod nll;
mod simsiam;
mod stain;

pub use infonce::{clip_symmetric_infonce, clip_symmetric_infonce_with_grad, EmbeddingBatch, InfoNceOutput};
pub use nll::{
    autoregressive_nll, autoregressive_nll_mean, log_softmax, nll_from_logits, LogitSequence, NllOutput, TokenBatch,
};
pub use simsiam::{simsiam_loss, simsiam_loss_with_grad, SiameseBatch, SiameseGrad};
pub use stain::{
    mse, render_single_stain, stain_separate, stain_separate_rgb, ConcentrationMap, StainMatrix, StainPretextPair,
    RUIFROK_EOSIN, RUIFROK_HEMATOXYLIN,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("{what} row {row} has zero norm; cosine similarity is undefined")]
    ZeroNorm { what: &'static str, row: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("log-probability {value} at sample {sample}, step {step} is positive")]
    PositiveLogProb { sample: usize, step: usize, value: f64 },
    #[error("sample {0} has no target tokens")]
    EmptySequence(usize),
    #[error("expected 8-bit RGB input, got {0}")]
    NotRgb(String),
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Check a row-major batch: same row count and width everywhere, finite, non-zero rows.
pub(crate) fn check_rows(
    rows: &[Vec<f64>],
    what: &'static str,
    n: usize,
    d: usize,
) -> Result<Vec<f64>, ObjectiveError> {
    if rows.len() != n {
        return Err(ObjectiveError::Shape(format!(
            "{what} has {} rows, expected {n}",
            rows.len()
        )));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != d {
                return Err(ObjectiveError::Shape(format!(
                    "{what} row {i} has width {}, expected {d}",
                    r.len()
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(ObjectiveError::NonFinite(what));
            }
            let n = norm(r);
            if n == 0.0 {
                return Err(ObjectiveError::ZeroNorm { what, row: i });
            }
            Ok(n)
        })
        .collect()
}

/// d/dx of f(x/|x|) given g = df/d(x̂): (g - (g·x̂) x̂) / |x|.
pub(crate) fn through_normalization(g: &[f64], unit: &[f64], norm: f64) -> Vec<f64> {
    let proj = dot(g, unit);
    g.iter().zip(unit).map(|(gi, ui)| (gi - proj * ui) / norm).collect()
}

#[cfg(test)]
mod gradient_tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-6;

    fn rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect()
    }

    fn central<F: Fn(&[Vec<f64>]) -> f64>(x: &[Vec<f64>], f: F) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; x[0].len()]; x.len()];
        for i in 0..x.len() {
            for k in 0..x[0].len() {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i][k] += H;
                b[i][k] -= H;
                out[i][k] = (f(&a) - f(&b)) / (2.0 * H);
            }
        }
        out
    }

    fn assert_close(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) {
        for (a, n) in analytic.iter().flatten().zip(numeric.iter().flatten()) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn infonce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let n = rng.random_range(2..6);
            let d = rng.random_range(2..5);
            let u = rows(&mut rng, n, d);
            let v = rows(&mut rng, n, d);
            let tau = 0.3;
            let out = clip_symmetric_infonce_with_grad(&EmbeddingBatch {
                image: u.clone(),
                text: v.clone(),
                temperature: tau,
            })
            .unwrap();
            let fu = central(&u, |x| {
                clip_symmetric_infonce(&EmbeddingBatch {
                    image: x.to_vec(),
                    text: v.clone(),
                    temperature: tau,
                })
                .unwrap()
            });
            let fv = central(&v, |x| {
                clip_symmetric_infonce(&EmbeddingBatch {
                    image: u.clone(),
                    text: x.to_vec(),
                    temperature: tau,
                })
                .unwrap()
            });
            assert_close(&out.grad_image, &fu);
            assert_close(&out.grad_text, &fv);
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = rows(&mut rng, 3, 5);
        let targets = vec![0, 4, 2];
        let f = |x: &[Vec<f64>]| {
            nll_from_logits(&[LogitSequence {
                logits: x.to_vec(),
                targets: targets.clone(),
            }])
            .unwrap()
            .loss
        };
        let out = nll_from_logits(&[LogitSequence {
            logits: logits.clone(),
            targets: targets.clone(),
        }])
        .unwrap();
        assert_close(&out.grad_logits[0], &central(&logits, f));
    }

    #[test]
    fn simsiam_prediction_gradient_matches_finite_differences_with_fixed_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (p1, p2, z1, z2) = (
            rows(&mut rng, 4, 3),
            rows(&mut rng, 4, 3),
            rows(&mut rng, 4, 3),
            rows(&mut rng, 4, 3),
        );
        let g = simsiam_loss_with_grad(&SiameseBatch {
            p1: p1.clone(),
            p2: p2.clone(),
            z1: z1.clone(),
            z2: z2.clone(),
        })
        .unwrap();
        let f1 = central(&p1, |x| {
            simsiam_loss(&SiameseBatch {
                p1: x.to_vec(),
                p2: p2.clone(),
                z1: z1.clone(),
                z2: z2.clone(),
            })
            .unwrap()
        });
        let f2 = central(&p2, |x| {
            simsiam_loss(&SiameseBatch {
                p1: p1.clone(),
                p2: x.to_vec(),
                z1: z1.clone(),
                z2: z2.clone(),
            })
            .unwrap()
        });
        assert_close(&g.p1, &f1);
        assert_close(&g.p2, &f2);
    }
}
