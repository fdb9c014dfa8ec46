use super::EvalError;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// Every paired difference is zero; p is reported as 1.
    AllZero,
    /// Differences are constant and nonzero; p is reported as 0.
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub degenerate: Option<Degeneracy>,
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom,
/// `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided(t: f64, df: usize) -> f64 {
    let v = df as f64;
    beta_reg(v / 2.0, 0.5, v / (v + t * t))
}

/// Paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::Pairing {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::BadScore {
            tile_id: "paired metric".into(),
            score: f64::NAN,
        });
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Relative to the size of the differences, so float noise in a constant
    // difference still counts as zero variance.
    if var.sqrt() <= 1e-12 * scale {
        if d.iter().all(|v| *v == 0.0) {
            return Ok(TTest {
                t: 0.0,
                p: 1.0,
                df,
                degenerate: Some(Degeneracy::AllZero),
            });
        }
        return Ok(TTest {
            t: f64::INFINITY.copysign(mean),
            p: 0.0,
            df,
            degenerate: Some(Degeneracy::ZeroVariance),
        });
    }
    let t = mean / (var.sqrt() / n.sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided(t, df),
        df,
        degenerate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_case() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((r.t - 3.4641).abs() < 1e-3);
        assert_eq!(r.df, 2);
        // Closed form for two degrees of freedom.
        let oracle = 1.0 - r.t.abs() / (r.t * r.t + 2.0).sqrt();
        assert!((r.p - oracle).abs() < 1e-10);
        assert!((r.p - 0.0742).abs() < 1e-3);
    }

    #[test]
    fn reference_critical_values() {
        // Two-sided 5% critical values of Student's t.
        for (df, crit) in [(1, 12.706), (2, 4.303), (4, 2.776), (10, 2.228), (30, 2.042)] {
            assert!((student_t_two_sided(crit, df) - 0.05).abs() < 2e-4, "df {df}");
        }
        // df = 1 is the Cauchy distribution.
        assert!((student_t_two_sided(1.0, 1) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn degenerate_cases() {
        let r = paired_t_test(&[0.8, 0.9], &[0.8, 0.9]).unwrap();
        assert_eq!((r.p, r.degenerate), (1.0, Some(Degeneracy::AllZero)));
        let r = paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.p, r.degenerate), (0.0, Some(Degeneracy::ZeroVariance)));
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn antisymmetric_statistic_symmetric_p(
            a in prop::collection::vec(0.0f64..1.0, 5),
            b in prop::collection::vec(0.0f64..1.0, 5),
        ) {
            let ab = paired_t_test(&a, &b).unwrap();
            let ba = paired_t_test(&b, &a).unwrap();
            prop_assert!((ab.t + ba.t).abs() < 1e-9 * (1.0 + ab.t.abs()));
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }
    }
}
