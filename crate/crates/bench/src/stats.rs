//! The pooled two-sample t statistic used to compare runs across seeds.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{BenchError, Result};

/// One-sided significance level of the comparison.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// One-sided critical value at [`ALPHA`] (2.132 for `df = 4`).
    pub critical: f64,
    /// One-sided p-value `P(T ≥ t)`.
    pub p_value: f64,
    pub significant: bool,
}

/// `t = (mean1 − mean2) / sqrt((std1² + std2²) / n)` with `df = 2(n − 1)`.
pub fn two_sample_t(mean1: f64, std1: f64, mean2: f64, std2: f64, n: usize) -> Result<TTest> {
    if n < 2 {
        return Err(BenchError::Config(format!(
            "t-test needs n >= 2 runs per group, got {n}"
        )));
    }
    if !(std1 >= 0.0 && std2 >= 0.0) {
        return Err(BenchError::Config("standard deviations must be >= 0".into()));
    }
    if std1 == 0.0 && std2 == 0.0 {
        return Err(BenchError::Config(
            "both standard deviations are zero: t is undefined".into(),
        ));
    }
    let t = (mean1 - mean2) / ((std1 * std1 + std2 * std2) / n as f64).sqrt();
    let df = 2 * (n - 1);
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| BenchError::Config(e.to_string()))?;
    let critical = dist.inverse_cdf(1.0 - ALPHA);
    Ok(TTest {
        t,
        df,
        critical,
        p_value: dist.sf(t),
        significant: t > critical,
    })
}

/// Mean and sample standard deviation (`n − 1` denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    // The rounded mean of identical values can miss them by an ulp.
    if values.iter().all(|v| *v == values[0]) {
        return (values[0], 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
