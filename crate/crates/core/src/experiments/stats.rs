//! Sample statistics for Monte Carlo estimators.

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

/// Mean, standard error (n−1 denominator), and the normal 95% interval.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData(n));
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    let se = (ss / (n - 1) as f64 / n as f64).sqrt();
    Ok(Summary {
        mean,
        se,
        ci_lo: mean - 1.96 * se,
        ci_hi: mean + 1.96 * se,
        n,
    })
}

/// `(mean − oracle) / se`. A zero standard error gives 0 on an exact match
/// and ±∞ otherwise.
pub fn z_score(mean: f64, se: f64, oracle: f64) -> f64 {
    let diff = mean - oracle;
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}
