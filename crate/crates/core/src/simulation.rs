//! Monte-Carlo comparison of heatwave effect estimators.
//!
//! Daily temperature is an annual sinusoid plus AR(1) noise. Deaths are
//! Poisson with a log mean built from low-temperature lags, heatwave-zeroed
//! high-temperature lags, the heatwave indicator and the first post-episode
//! indicator. Each replicate is fitted with Models 1, 2 and 3 (and the
//! lagged Model 3 when a post-episode effect is simulated) at the true OT.

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DailyRecord, DailySeries, SeasonWindow};
use crate::error::{Error, Result};
use crate::glm::{linear_combination, normal_critical, FitResult};
use crate::heatwave::{flag_heatwaves, Comparison, HeatwaveConfig};
use crate::models::{analyze, ConfounderSpec, ModelKind, ModelSpec, OtSource, StudyData};
use crate::transform::{build_variables, LagMatrix, TransformConfig, VLength};

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9), seed_from_u64(seed), stream = replicate index";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TempModel {
    /// Annual mean, °C.
    pub mean: f64,
    pub amplitude: f64,
    /// Day of year of the seasonal peak.
    pub peak_day: f64,
    /// AR(1) coefficient of the daily anomaly.
    pub ar_coef: f64,
    pub innovation_sd: f64,
}

impl Default for TempModel {
    fn default() -> Self {
        Self {
            mean: 13.0,
            amplitude: 12.0,
            peak_day: 205.0,
            ar_coef: 0.7,
            innovation_sd: 2.2,
        }
    }
}

/// Which lagged high-temperature column carries the non-heatwave heat
/// effect in the generating model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatForm {
    /// Lags zeroed on current heatwave days (Model 3 is correctly specified).
    CurrentDay,
    /// Lag-of-series zeroed lags with pre-episode components removed
    /// (lagged Model 3 is correctly specified).
    LagOfSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_years: usize,
    pub start_year: i32,
    pub temp_model: TempModel,
    pub baseline_log_rate: f64,
    pub true_ot: f64,
    /// Log-RR per °C for non-heatwave high temperature at lags 0, 1, ...
    pub true_ht_slopes: Vec<f64>,
    /// Log-RR per °C of `min(T - OT, 0)` at lags 0, 1, ...
    pub true_lt_slopes: Vec<f64>,
    pub true_hw_log_rr: f64,
    pub true_fhw_log_rr: f64,
    pub hw_percentile: f64,
    pub min_duration: usize,
    pub seed: u64,
    /// `None` picks `CurrentDay` without a post-episode effect and
    /// `LagOfSeries` with one.
    pub heat_form: Option<HeatForm>,
    pub window: SeasonWindow,
    pub fit_confounders: ConfounderSpec,
    pub level: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_years: 8,
            start_year: 2006,
            temp_model: TempModel::default(),
            baseline_log_rate: 80f64.ln(),
            true_ot: 22.0,
            true_ht_slopes: vec![0.02, 0.02],
            true_lt_slopes: vec![0.0, 0.0],
            true_hw_log_rr: 1.15f64.ln(),
            true_fhw_log_rr: 0.0,
            hw_percentile: 0.99,
            min_duration: 2,
            seed: 20240601,
            heat_form: None,
            window: SeasonWindow::summer(),
            fit_confounders: ConfounderSpec::none(),
            level: 0.95,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let tm = &self.temp_model;
        if !(0.0..1.0).contains(&tm.ar_coef) {
            return Err(Error::InvalidConfig("AR coefficient must lie in [0, 1)".into()));
        }
        if tm.innovation_sd.is_nan() || tm.innovation_sd <= 0.0 {
            return Err(Error::InvalidConfig("innovation sd must be positive".into()));
        }
        if self.n_years == 0 {
            return Err(Error::InvalidConfig("n_years must be positive".into()));
        }
        if self.true_ht_slopes.is_empty() || self.true_lt_slopes.is_empty() {
            return Err(Error::InvalidConfig("slope vectors need at least lag 0".into()));
        }
        if self.true_ht_slopes.len() > 8 || self.true_lt_slopes.len() > 8 {
            return Err(Error::InvalidConfig("slopes limited to lags 0..7".into()));
        }
        let all = [self.baseline_log_rate, self.true_ot, self.true_hw_log_rr, self.true_fhw_log_rr];
        if all.iter().chain(&self.true_ht_slopes).chain(&self.true_lt_slopes).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite rate parameter".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig("level must lie in (0, 1)".into()));
        }
        self.hw_config().validate()
    }

    pub fn heat_form(&self) -> HeatForm {
        self.heat_form.unwrap_or(if self.true_fhw_log_rr != 0.0 {
            HeatForm::LagOfSeries
        } else {
            HeatForm::CurrentDay
        })
    }

    fn hw_config(&self) -> HeatwaveConfig {
        HeatwaveConfig {
            percentile: self.hw_percentile,
            min_duration: self.min_duration,
            ..Default::default()
        }
    }

    fn j_l(&self) -> usize {
        self.true_lt_slopes.len() - 1
    }

    fn j_h(&self) -> usize {
        self.true_ht_slopes.len() - 1
    }

    fn v_len(&self) -> usize {
        self.j_h().max(1)
    }

    fn model_spec(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            j_l: self.j_l(),
            j_h: self.j_h(),
            k: VLength::Fixed(self.v_len()),
            p: 1,
            confounders: self.fit_confounders.clone(),
            ot: OtSource::Fixed(self.true_ot),
            ..Default::default()
        }
    }
}

/// Known quantities of one generated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub hw_log_rr: f64,
    pub fhw_log_rr: f64,
    pub ot: f64,
    pub threshold: f64,
    pub heat_form: HeatForm,
    pub n_hw_days_in_season: usize,
    pub n_episodes_in_season: usize,
    /// Expected deaths per day.
    pub mu: Vec<f64>,
    /// Heatwave flag per day.
    pub hw: Vec<bool>,
}

/// Generate the series for replicate 0.
pub fn generate_series(config: &SimConfig) -> Result<(DailySeries, SimTruth)> {
    generate_replicate(config, 0)
}

/// Generate the series for `replicate`; each replicate has its own stream.
pub fn generate_replicate(config: &SimConfig, replicate: u64) -> Result<(DailySeries, SimTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate);

    let first = NaiveDate::from_ymd_opt(config.start_year, 1, 1)
        .ok_or_else(|| Error::InvalidConfig("bad start year".into()))?;
    let last_year = config.start_year + config.n_years as i32 - 1;
    let last = NaiveDate::from_ymd_opt(last_year, 12, 31)
        .ok_or_else(|| Error::InvalidConfig("bad year range".into()))?;
    let dates: Vec<NaiveDate> = first.iter_days().take_while(|d| *d <= last).collect();
    let n = dates.len();

    let tm = &config.temp_model;
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let stationary_sd = tm.innovation_sd / (1.0 - tm.ar_coef * tm.ar_coef).sqrt();
    let mut anomaly = stationary_sd * std_normal.sample(&mut rng);
    let temps: Vec<f64> = dates
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if i > 0 {
                anomaly = tm.ar_coef * anomaly + tm.innovation_sd * std_normal.sample(&mut rng);
            }
            let doy = f64::from(d.ordinal());
            let season = tm.mean
                + tm.amplitude * (2.0 * std::f64::consts::PI * (doy - tm.peak_day) / 365.25).cos();
            // rounded like station records
            ((season + anomaly) * 10.0).round() / 10.0
        })
        .collect();

    let hw_cfg = config.hw_config();
    let threshold = hw_cfg.resolve_threshold(&temps)?;
    let blocks = crate::data::Blocks::contiguous(n);
    let flags = flag_heatwaves(&temps, &blocks, threshold, config.min_duration, Comparison::Strict)
        .with_fhw(1);
    let tcfg = TransformConfig {
        ot: config.true_ot,
        max_lag_lt: config.j_l(),
        max_lag_ht: config.j_h(),
        v_len: VLength::Fixed(config.v_len()),
        zero_v_across_episodes: false,
    };
    let vars = build_variables(&temps, &flags, &tcfg)?;
    let heat_form = config.heat_form();
    let heat: &LagMatrix = match heat_form {
        HeatForm::CurrentDay => &vars.ht_star,
        HeatForm::LagOfSeries => &vars.ht_tstar,
    };
    let or_zero = |v: f64| if v.is_finite() { v } else { 0.0 };

    let mut mu = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for t in 0..n {
        let mut eta = config.baseline_log_rate;
        for (j, s) in config.true_lt_slopes.iter().enumerate() {
            eta += s * or_zero(vars.lt.get(t, j));
        }
        for (j, s) in config.true_ht_slopes.iter().enumerate() {
            eta += s * or_zero(heat.get(t, j));
        }
        if flags.hw[t] {
            eta += config.true_hw_log_rr;
        }
        if flags.fhw_at(t, 1) {
            eta += config.true_fhw_log_rr;
        }
        let m = eta.exp();
        let deaths = Poisson::new(m)
            .map_err(|e| Error::InvalidConfig(format!("Poisson mean {m}: {e}")))?
            .sample(&mut rng) as u32;
        mu.push(m);
        records.push(DailyRecord {
            date: dates[t],
            deaths,
            tmean: temps[t],
            pm10: None,
            o3: None,
            holiday: false,
        });
    }

    let in_season: Vec<bool> = dates.iter().map(|d| config.window.contains(*d)).collect();
    let truth = SimTruth {
        hw_log_rr: config.true_hw_log_rr,
        fhw_log_rr: config.true_fhw_log_rr,
        ot: config.true_ot,
        threshold,
        heat_form,
        n_hw_days_in_season: (0..n).filter(|&t| in_season[t] && flags.hw[t]).count(),
        n_episodes_in_season: flags.episodes.iter().filter(|e| in_season[e.start]).count(),
        mu,
        hw: flags.hw.clone(),
    };
    let series = DailySeries::new(records, format!("simulated seed={} replicate={replicate}", config.seed))?;
    Ok((series, truth))
}

/// One estimate from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub model: String,
    pub estimate: f64,
    pub se: f64,
    pub truth: f64,
    pub covered: bool,
    /// Interval excludes zero.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub truth: f64,
    pub n_ok: usize,
    pub mean_estimate: f64,
    pub empirical_sd: f64,
    pub bias: f64,
    pub coverage: f64,
    pub rejection_rate: f64,
    pub mean_percent_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub rng_algorithm: String,
    pub n_replicates: usize,
    pub n_failed: usize,
    /// More than 5% of replicates failed.
    pub failure_flag: bool,
    pub mean_hw_days: f64,
    pub mean_episodes: f64,
    pub models: Vec<ModelSummary>,
    pub config: SimConfig,
    #[serde(skip)]
    pub replicates: Vec<ReplicateRecord>,
}

impl SimReport {
    pub fn model(&self, name: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == name)
    }
}

fn model_labels(config: &SimConfig) -> Vec<(&'static str, ModelKind)> {
    let mut v = vec![("M1", ModelKind::M1), ("M2", ModelKind::M2), ("M3", ModelKind::M3)];
    if config.true_fhw_log_rr != 0.0 {
        v.push(("M3_LAG", ModelKind::M3Lag));
    }
    v
}

struct ReplicateOutcome {
    records: Vec<ReplicateRecord>,
    failed: bool,
    hw_days: usize,
    episodes: usize,
}

fn run_replicate(config: &SimConfig, index: usize) -> ReplicateOutcome {
    let failed = |hw_days, episodes| ReplicateOutcome {
        records: Vec::new(),
        failed: true,
        hw_days,
        episodes,
    };
    let Ok((series, truth)) = generate_replicate(config, index as u64) else {
        return failed(0, 0);
    };
    let hw = config.hw_config();
    let Ok(study) = StudyData::prepare(series, config.window, &hw) else {
        return failed(truth.n_hw_days_in_season, truth.n_episodes_in_season);
    };
    let z = normal_critical(config.level);
    let mut records = Vec::new();
    let mut push = |model: &str, (estimate, se): (f64, f64), truth: f64| {
        records.push(ReplicateRecord {
            replicate: index,
            model: model.to_string(),
            estimate,
            se,
            truth,
            covered: (estimate - truth).abs() <= z * se,
            rejected: estimate.abs() > z * se,
        });
    };
    for (label, kind) in model_labels(config) {
        let spec = config.model_spec(kind);
        let fit: FitResult = match analyze(&study, &spec, config.level) {
            Ok(a) if a.fit.converged && !a.fit.divergent => a.fit,
            Ok(_) | Err(_) => {
                log::debug!("replicate {index}: {label} fit failed");
                return failed(truth.n_hw_days_in_season, truth.n_episodes_in_season);
            }
        };
        let Ok(hw_est) = linear_combination(&fit, &[("HW", 1.0)]) else {
            return failed(truth.n_hw_days_in_season, truth.n_episodes_in_season);
        };
        push(label, hw_est, truth.hw_log_rr);
        if kind == ModelKind::M3Lag {
            let Ok(sum) = linear_combination(&fit, &[("HW", 1.0), ("FHW_1", 1.0)]) else {
                return failed(truth.n_hw_days_in_season, truth.n_episodes_in_season);
            };
            push("M3_LAG_SUM1", sum, truth.hw_log_rr + truth.fhw_log_rr);
        }
    }
    ReplicateOutcome {
        records,
        failed: false,
        hw_days: truth.n_hw_days_in_season,
        episodes: truth.n_episodes_in_season,
    }
}

/// Fit every model on `n_replicates` generated series and summarise.
pub fn run_comparison(config: &SimConfig, n_replicates: usize) -> Result<SimReport> {
    config.validate()?;
    if n_replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    if n_replicates < 100 {
        log::warn!("{n_replicates} replicates: coverage estimates will be coarse");
    }
    let outcomes: Vec<ReplicateOutcome> = (0..n_replicates)
        .into_par_iter()
        .map(|i| run_replicate(config, i))
        .collect();

    let n_failed = outcomes.iter().filter(|o| o.failed).count();
    let failure_flag = n_failed as f64 > 0.05 * n_replicates as f64;
    if n_failed > 0 {
        log::warn!("{n_failed} of {n_replicates} replicates failed and were excluded");
    }
    let mean_hw_days = outcomes.iter().map(|o| o.hw_days as f64).sum::<f64>() / n_replicates as f64;
    let mean_episodes = outcomes.iter().map(|o| o.episodes as f64).sum::<f64>() / n_replicates as f64;
    let replicates: Vec<ReplicateRecord> = outcomes.into_iter().flat_map(|o| o.records).collect();

    let mut labels: Vec<String> = Vec::new();
    for r in &replicates {
        if !labels.contains(&r.model) {
            labels.push(r.model.clone());
        }
    }
    let models = labels
        .into_iter()
        .map(|label| {
            let rs: Vec<&ReplicateRecord> = replicates.iter().filter(|r| r.model == label).collect();
            let k = rs.len() as f64;
            let mean = rs.iter().map(|r| r.estimate).sum::<f64>() / k;
            let var = if rs.len() > 1 {
                rs.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            let truth = rs[0].truth;
            ModelSummary {
                model: label,
                truth,
                n_ok: rs.len(),
                mean_estimate: mean,
                empirical_sd: var.sqrt(),
                bias: mean - truth,
                coverage: rs.iter().filter(|r| r.covered).count() as f64 / k,
                rejection_rate: rs.iter().filter(|r| r.rejected).count() as f64 / k,
                mean_percent_change: rs.iter().map(|r| (r.estimate.exp() - 1.0) * 100.0).sum::<f64>() / k,
            }
        })
        .collect();

    Ok(SimReport {
        rng_algorithm: RNG_ALGORITHM.to_string(),
        n_replicates,
        n_failed,
        failure_flag,
        mean_hw_days,
        mean_episodes,
        models,
        config: config.clone(),
        replicates,
    })
}

/// Per-replicate table as CSV: replicate, model, estimate, se, covered.
pub fn write_replicates<W: std::io::Write>(writer: W, report: &SimReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["replicate", "model", "estimate", "se", "covered"])?;
    for r in &report.replicates {
        w.write_record([
            r.replicate.to_string(),
            r.model.clone(),
            format!("{:.12e}", r.estimate),
            format!("{:.12e}", r.se),
            u8::from(r.covered).to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<replicates>".into(),
        source,
    })?;
    Ok(())
}

/// Mean deaths on heatwave days over mean deaths on non-heatwave days with
/// temperature within `band` °C of OT.
pub fn heatwave_to_ot_ratio(series: &DailySeries, truth: &SimTruth, band: f64) -> f64 {
    let recs = series.records();
    let mean = |pred: &dyn Fn(usize) -> bool| {
        let (s, c) = (0..recs.len())
            .filter(|&t| pred(t))
            .fold((0.0, 0usize), |(s, c), t| (s + f64::from(recs[t].deaths), c + 1));
        s / c as f64
    };
    let hw = mean(&|t| truth.hw[t]);
    let near_ot = mean(&|t| !truth.hw[t] && (recs[t].tmean - truth.ot).abs() <= band);
    hw / near_ot
}
