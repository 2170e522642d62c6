//! Heatwave thresholds, episode flags and post-episode lag indicators.
//!
//! A heatwave day is a day inside a run of at least `min_duration`
//! consecutive days whose temperature exceeds the threshold. Runs are
//! counted within contiguous blocks only.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::Blocks;
use crate::error::{Error, Result};
use crate::quantile::{quantile, QuantileMethod};

/// How a day's temperature is compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `T > threshold`.
    #[default]
    Strict,
    /// `T >= threshold`.
    Inclusive,
}

impl Comparison {
    #[inline]
    pub fn exceeds(self, t: f64, threshold: f64) -> bool {
        match self {
            Comparison::Strict => t > threshold,
            Comparison::Inclusive => t >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatwaveConfig {
    pub percentile: f64,
    pub min_duration: usize,
    pub threshold_override: Option<f64>,
    pub comparison: Comparison,
    pub quantile_method: QuantileMethod,
}

impl Default for HeatwaveConfig {
    fn default() -> Self {
        Self {
            percentile: 0.99,
            min_duration: 2,
            threshold_override: None,
            comparison: Comparison::Strict,
            quantile_method: QuantileMethod::Linear,
        }
    }
}

impl HeatwaveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "heatwave percentile {} must lie in (0, 1)",
                self.percentile
            )));
        }
        if self.min_duration < 1 {
            return Err(Error::InvalidConfig("min_duration must be at least 1".into()));
        }
        if let Some(t) = self.threshold_override {
            if !t.is_finite() {
                return Err(Error::InvalidConfig("threshold override is not finite".into()));
            }
        }
        Ok(())
    }

    /// The override if set, else the configured percentile of `reference`.
    pub fn resolve_threshold(&self, reference: &[f64]) -> Result<f64> {
        self.validate()?;
        match self.threshold_override {
            Some(t) => Ok(t),
            None => percentile_threshold(reference, self.percentile, self.quantile_method),
        }
    }
}

/// Empirical percentile of a year-round temperature series.
pub fn percentile_threshold(temps: &[f64], percentile: f64, method: QuantileMethod) -> Result<f64> {
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "percentile {percentile} must lie in (0, 1)"
        )));
    }
    quantile(temps, percentile, method)
}

/// Per-day heatwave indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatwaveFlags {
    pub threshold: f64,
    pub hw: Vec<bool>,
    /// 0 off-episode, otherwise the 1-based day within the episode.
    pub episode_day: Vec<u32>,
    /// Day ranges of each episode in time order.
    pub episodes: Vec<Range<usize>>,
    /// `fhw[t][p - 1]` marks day `t` as the `p`-th day after an episode end.
    /// Empty rows until [`HeatwaveFlags::with_fhw`] is called.
    pub fhw: Vec<Vec<bool>>,
    blocks: Blocks,
}

impl HeatwaveFlags {
    pub fn len(&self) -> usize {
        self.hw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hw.is_empty()
    }

    pub fn blocks(&self) -> &Blocks {
        &self.blocks
    }

    pub fn max_fhw_lag(&self) -> usize {
        self.fhw.first().map_or(0, Vec::len)
    }

    /// Attach post-episode indicators for lags `1..=max_lag`.
    pub fn with_fhw(mut self, max_lag: usize) -> Self {
        self.fhw = build_fhw(&self, max_lag);
        self
    }

    /// Longest episode, in days.
    pub fn max_duration(&self) -> usize {
        self.episodes.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    /// Whether day `t` is the `lag`-th day after an episode.
    pub fn fhw_at(&self, t: usize, lag: usize) -> bool {
        lag >= 1 && self.fhw[t].get(lag - 1).copied().unwrap_or(false)
    }
}

/// Flag heatwave days in `temps` against a resolved `threshold`.
pub fn flag_heatwaves(
    temps: &[f64],
    blocks: &Blocks,
    threshold: f64,
    min_duration: usize,
    comparison: Comparison,
) -> HeatwaveFlags {
    assert_eq!(temps.len(), blocks.len());
    let n = temps.len();
    let min_duration = min_duration.max(1);
    let mut hw = vec![false; n];
    let mut episode_day = vec![0u32; n];
    let mut episodes = Vec::new();

    for block in blocks.ranges() {
        let mut t = block.start;
        while t < block.end {
            if !comparison.exceeds(temps[t], threshold) {
                t += 1;
                continue;
            }
            let start = t;
            while t < block.end && comparison.exceeds(temps[t], threshold) {
                t += 1;
            }
            if t - start >= min_duration {
                for (k, day) in (start..t).enumerate() {
                    hw[day] = true;
                    episode_day[day] = k as u32 + 1;
                }
                episodes.push(start..t);
            }
        }
    }

    HeatwaveFlags {
        threshold,
        hw,
        episode_day,
        episodes,
        fhw: vec![Vec::new(); n],
        blocks: blocks.clone(),
    }
}

/// Post-episode indicators: row `t`, column `p - 1` is set when day `t - p`
/// is the last day of an episode in the same block and no heatwave day lies
/// strictly between them. Day `t` itself may start a new episode.
pub fn build_fhw(flags: &HeatwaveFlags, max_lag: usize) -> Vec<Vec<bool>> {
    let n = flags.len();
    let mut fhw = vec![vec![false; max_lag]; n];
    for ep in &flags.episodes {
        let last = ep.end - 1;
        for p in 1..=max_lag {
            let Some(t) = flags.blocks.lead(last, p) else {
                break;
            };
            fhw[t][p - 1] = true;
            if flags.hw[t] {
                break;
            }
        }
    }
    fhw
}
