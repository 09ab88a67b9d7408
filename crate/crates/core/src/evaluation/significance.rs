use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{QderError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_two_sided: f64,
    pub n: usize,
    /// Set when the paired differences have zero variance; `p` is then 1.
    pub zero_variance: bool,
}

/// Paired two-sided t-test of `a` against `b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(QderError::Shape(format!(
            "paired samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(QderError::Invalid(format!(
            "t-test needs at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let t = if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        };
        return Ok(TTest {
            t,
            p_two_sided: 1.0,
            n,
            zero_variance: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist =
        StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| QderError::Numeric(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest {
        t,
        p_two_sided: p.clamp(0.0, 1.0),
        n,
        zero_variance: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let r = paired_t_test(&[0.1, 0.5, 0.3], &[0.1, 0.5, 0.3]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn constant_difference_is_flagged() {
        let r = paired_t_test(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(r.zero_variance);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn textbook_statistic() {
        let diffs = [0.1, 0.2, 0.05, 0.15, 0.1];
        let zeros = [0.0; 5];
        let r = paired_t_test(&diffs, &zeros).unwrap();
        // mean 0.12, sample variance 0.013 / 4 = 0.00325
        let expected = 0.12 / (0.00325f64 / 5.0).sqrt();
        assert!((r.t - expected).abs() < 1e-12, "{}", r.t);
        // Reference values from scipy.stats.ttest_1samp.
        assert!((r.t - 4.706787243316416).abs() < 1e-9);
        assert!(
            (r.p_two_sided - 0.009261696759514425).abs() < 1e-9,
            "{}",
            r.p_two_sided
        );
        assert!(!r.zero_variance);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }
}
