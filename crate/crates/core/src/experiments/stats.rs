//! Welch's unequal-variance t-test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchTest {
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-tailed p-value.
    pub p: f64,
}

impl WelchTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p <= alpha
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Two-tailed Welch t-test of equal means. When both samples have zero
/// variance the test degenerates: equal means give `t = 0, p = 1`, unequal
/// means give `t = ±∞, p = 0`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Config("t-test needs at least two samples per arm".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (sa, sb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let (t, p) = if ma == mb {
            (0.0, 1.0)
        } else {
            ((ma - mb).signum() * f64::INFINITY, 0.0)
        };
        return Ok(WelchTest {
            mean_a: ma,
            mean_b: mb,
            t,
            df: (a.len() + b.len() - 2) as f64,
            p,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(format!("t distribution: {e}")))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(WelchTest {
        mean_a: ma,
        mean_b: mb,
        t,
        df,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // Hand-computed: means 2 and 5, variances 1 and 1, n = 3 each:
        // se² = 2/3, t = −3/√(2/3) = −3.674235, df = 4.
        let w = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((w.t + 3.674_234_614).abs() < 1e-8);
        assert!((w.df - 4.0).abs() < 1e-12);
        // Two-tailed p for t = 3.674235 on 4 df.
        assert!((w.p - 0.021_311_641).abs() < 1e-6, "{}", w.p);
        assert!(w.significant(0.05));
    }

    #[test]
    fn unequal_variances_use_satterthwaite() {
        let a = [10.0, 12.0, 9.0, 11.0];
        let b = [10.5, 30.0, -5.0];
        let w = welch_t_test(&a, &b).unwrap();
        let (va, vb) = (variance(&a) / 4.0, variance(&b) / 3.0);
        let df = (va + vb).powi(2) / (va * va / 3.0 + vb * vb / 2.0);
        assert!((w.df - df).abs() < 1e-12);
        assert!((w.df - 2.016_266_588_5).abs() < 1e-9);
        assert!((w.p - 0.907_389_771_9).abs() < 1e-7, "{}", w.p);
        assert!(!w.significant(0.05));
    }

    #[test]
    fn degenerate_cases() {
        let w = welch_t_test(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((w.t, w.p), (0.0, 1.0));
        let w = welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert_eq!(w.p, 0.0);
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }
}
