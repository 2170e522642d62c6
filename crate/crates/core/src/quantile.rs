//! Empirical quantiles shared by threshold selection and knot placement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How an empirical quantile is read off the order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    /// Linear interpolation at position `(n - 1) * p + 1` (1-based).
    #[default]
    Linear,
    /// Smallest order statistic whose rank is at least `n * p`.
    NearestRank,
}

/// Empirical `p`-quantile of `values`. Non-finite values are ignored.
pub fn quantile(values: &[f64], p: f64, method: QuantileMethod) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "quantile probability {p} outside [0, 1]"
        )));
    }
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Err(Error::EmptySeries);
    }
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p, method))
}

/// Quantile of an already sorted, finite, non-empty slice.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64, method: QuantileMethod) -> f64 {
    let n = sorted.len();
    match method {
        QuantileMethod::Linear => {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = h - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
        QuantileMethod::NearestRank => {
            let rank = (p * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        }
    }
}
