//! Confidence intervals over repetitions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
    /// Half-width of the 95% t-interval.
    pub half_width: f64,
    /// Half-width as a percentage of the mean.
    pub pct_of_mean: f64,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Coefficient of variation with the sample standard deviation.
pub fn cov(v: &[f64]) -> f64 {
    sample_sd(v) / mean(v).abs()
}

/// Two-sided critical value `t_{0.025, dof}`.
pub fn t_critical(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

/// 95% t-interval for the mean; `None` with fewer than two samples.
pub fn t_interval(samples: &[f64]) -> Option<Interval> {
    if samples.len() < 2 || samples.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let n = samples.len();
    let m = mean(samples);
    let sd = sample_sd(samples);
    let half_width = t_critical(n - 1) * sd / (n as f64).sqrt();
    Some(Interval {
        n,
        mean: m,
        sd,
        half_width,
        pct_of_mean: if m == 0.0 { 0.0 } else { 100.0 * half_width / m.abs() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_values_match_tables() {
        assert!((t_critical(9) - 2.262157).abs() < 1e-6);
        assert!((t_critical(1) - 12.706205).abs() < 1e-5);
        assert!((t_critical(1000) - 1.962339).abs() < 1e-5);
    }

    #[test]
    fn single_sample_has_no_interval() {
        assert!(t_interval(&[1.0]).is_none());
    }
}
