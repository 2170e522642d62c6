//! Model assembly, optimal-temperature search and effect reporting.
//!
//! Model kinds, on top of an intercept, the heatwave indicator and the
//! confounder block:
//!
//! * `M1`: nothing else.
//! * `M2`: low- and high-temperature lags.
//! * `M3`: low-temperature lags, heatwave-zeroed high-temperature lags and
//!   the pre-episode heat vector.
//! * `M3_LAG`: as `M3` with lag-of-series high-temperature columns (minus
//!   the pre-episode components) and post-episode indicators, so the lagged
//!   heatwave effect is estimated rather than adjusted away.
//! * `M3_SPLINE`: natural-spline versions of the `M3`/`M3_LAG` temperature
//!   columns.

use std::fmt;
use std::str::FromStr;

use chrono::Weekday;
use serde::{Deserialize, Serialize};

use crate::data::{calendar_features, moving_average, CalendarFeature, DailySeries, SeasonWindow};
use crate::error::{Error, Result};
use crate::glm::{
    fit_quasipoisson, linear_combination, rate_ratio, CoefficientRow, DesignMatrix, FitResult,
    RateRatio,
};
use crate::heatwave::{flag_heatwaves, HeatwaveConfig, HeatwaveFlags};
use crate::quantile::{quantile, QuantileMethod};
use crate::spline::{default_knots, ncs_basis, SplineSpec};
use crate::transform::{build_variables, LagMatrix, TempVariableSet, TransformConfig, VLength};

/// Longest lag any model may request.
pub const MAX_LAG: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    M1,
    M2,
    M3,
    #[serde(rename = "M3_LAG")]
    M3Lag,
    #[serde(rename = "M3_SPLINE")]
    M3Spline,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::M1 => "M1",
            ModelKind::M2 => "M2",
            ModelKind::M3 => "M3",
            ModelKind::M3Lag => "M3_LAG",
            ModelKind::M3Spline => "M3_SPLINE",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(ModelKind::M1),
            "M2" => Ok(ModelKind::M2),
            "M3" => Ok(ModelKind::M3),
            "M3_LAG" | "M3LAG" => Ok(ModelKind::M3Lag),
            "M3_SPLINE" | "M3SPLINE" => Ok(ModelKind::M3Spline),
            _ => Err(Error::InvalidConfig(format!("unknown model kind '{s}'"))),
        }
    }
}

/// Time-trend, seasonality, weekday and pollution adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfounderSpec {
    /// Spline df for day of season; `None` drops the seasonal term.
    pub season_df: Option<usize>,
    pub year_dummies: bool,
    /// Year dummy times each seasonal basis column.
    pub year_season_interaction: bool,
    pub day_of_week: bool,
    pub holiday: bool,
    pub pm10_df: Option<usize>,
    pub o3_df: Option<usize>,
    /// Width of the trailing pollutant moving average, days.
    pub pollutant_window: usize,
}

impl ConfounderSpec {
    pub fn none() -> Self {
        Self {
            season_df: None,
            year_dummies: false,
            year_season_interaction: false,
            day_of_week: false,
            holiday: false,
            pm10_df: None,
            o3_df: None,
            pollutant_window: 2,
        }
    }
}

impl Default for ConfounderSpec {
    fn default() -> Self {
        Self {
            season_df: Some(4),
            year_dummies: true,
            year_season_interaction: true,
            day_of_week: true,
            holiday: false,
            pm10_df: Some(3),
            o3_df: Some(3),
            pollutant_window: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtSource {
    Fixed(f64),
    Auto,
}

/// Settings for the optimal-temperature search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OtSearch {
    pub spline_df: usize,
    /// Lag of the second temperature spline; 0 uses the same-day spline only.
    pub lag: usize,
    /// Grid step, °C.
    pub resolution: f64,
}

impl Default for OtSearch {
    fn default() -> Self {
        Self {
            spline_df: 4,
            lag: 1,
            resolution: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub j_l: usize,
    pub j_h: usize,
    pub k: VLength,
    pub p: usize,
    pub confounders: ConfounderSpec,
    pub ot: OtSource,
    pub ot_search: OtSearch,
    /// Spline df for the temperature terms of `M3_SPLINE`.
    pub temp_df: usize,
    /// Use spline-expanded pre-episode terms in `M3_SPLINE`.
    pub v_spline: bool,
    pub zero_v_across_episodes: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::M3,
            j_l: 1,
            j_h: 1,
            k: VLength::MatchHt,
            p: 1,
            confounders: ConfounderSpec::default(),
            ot: OtSource::Auto,
            ot_search: OtSearch::default(),
            temp_df: 3,
            v_spline: false,
            zero_v_across_episodes: false,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, lag) in [("j_l", self.j_l), ("j_h", self.j_h), ("p", self.p)] {
            if lag > MAX_LAG {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {lag} exceeds the maximum lag {MAX_LAG}"
                )));
            }
        }
        if let VLength::Fixed(k) = self.k {
            if k > MAX_LAG {
                return Err(Error::InvalidConfig(format!("k = {k} exceeds {MAX_LAG}")));
            }
        }
        if self.kind == ModelKind::M3Lag && self.p == 0 {
            return Err(Error::InvalidConfig("M3_LAG needs p >= 1".into()));
        }
        if self.temp_df < 1 {
            return Err(Error::InvalidConfig("temp_df must be at least 1".into()));
        }
        Ok(())
    }

    fn uses_fhw(&self) -> bool {
        match self.kind {
            ModelKind::M3Lag => true,
            ModelKind::M3Spline => self.p > 0,
            _ => false,
        }
    }

    pub fn transform_config(&self, ot: f64) -> TransformConfig {
        TransformConfig {
            ot,
            max_lag_lt: self.j_l,
            max_lag_ht: self.j_h,
            v_len: self.k,
            zero_v_across_episodes: self.zero_v_across_episodes,
        }
    }
}

/// A loaded series with heatwave flags and calendar covariates, ready for
/// model fitting on the in-season days.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub series: DailySeries,
    pub window: SeasonWindow,
    pub threshold: f64,
    pub flags: HeatwaveFlags,
    pub in_season: Vec<bool>,
    pub calendar: Vec<CalendarFeature>,
    pub temps: Vec<f64>,
    pub deaths: Vec<f64>,
}

impl StudyData {
    /// Resolve the threshold over every loaded day (year-round when the
    /// series is), then flag heatwaves and attach post-episode indicators up
    /// to [`MAX_LAG`].
    pub fn prepare(series: DailySeries, window: SeasonWindow, hw: &HeatwaveConfig) -> Result<Self> {
        let temps = series.temps();
        let threshold = hw.resolve_threshold(&temps)?;
        let flags = flag_heatwaves(
            &temps,
            &series.blocks(),
            threshold,
            hw.min_duration,
            hw.comparison,
        )
        .with_fhw(MAX_LAG);
        let in_season: Vec<bool> = series.records().iter().map(|r| window.contains(r.date)).collect();
        if !in_season.iter().any(|&b| b) {
            return Err(Error::EmptySeason);
        }
        let calendar = calendar_features(&series, &window);
        let deaths = series.deaths();
        Ok(Self {
            series,
            window,
            threshold,
            flags,
            in_season,
            calendar,
            temps,
            deaths,
        })
    }

    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }

    pub fn variables(&self, spec: &ModelSpec, ot: f64) -> Result<TempVariableSet> {
        build_variables(&self.temps, &self.flags, &spec.transform_config(ot))
    }

    fn pollutant(&self, pick: fn(&crate::data::DailyRecord) -> Option<f64>, width: usize) -> Vec<f64> {
        let raw: Vec<Option<f64>> = self.series.records().iter().map(pick).collect();
        moving_average(&raw, width.max(1), self.flags.blocks())
            .into_iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect()
    }
}

/// Day-level column with `NaN` for unavailable values.
struct DayColumn {
    name: String,
    values: Vec<f64>,
}

fn push_lags(cols: &mut Vec<DayColumn>, prefix: &str, m: &LagMatrix, lags: impl Iterator<Item = usize>) {
    for l in lags {
        cols.push(DayColumn {
            name: format!("{prefix}_l{l}"),
            values: m.column(l),
        });
    }
}

/// Spline-expanded day-level input; expanded after row selection.
struct SplineInput {
    prefix: String,
    values: Vec<f64>,
    /// Rows where the term is switched off (basis row set to zero).
    active: Option<Vec<bool>>,
}

fn spline_columns(
    rows: &[usize],
    input: &SplineInput,
    spec: &SplineSpec,
    out_names: &mut Vec<String>,
    out_cols: &mut Vec<Vec<f64>>,
) -> Result<()> {
    let x: Vec<f64> = rows.iter().map(|&t| input.values[t]).collect();
    let basis = ncs_basis(&x, spec)?;
    for b in 0..basis.ncols() {
        out_names.push(format!("{}_{}", input.prefix, b + 1));
        out_cols.push(
            rows.iter()
                .enumerate()
                .map(|(i, &t)| match &input.active {
                    Some(active) if !active[t] => 0.0,
                    _ => basis[(i, b)],
                })
                .collect(),
        );
    }
    Ok(())
}

fn confounder_inputs(study: &StudyData, conf: &ConfounderSpec) -> Vec<DayColumn> {
    let mut req = Vec::new();
    if conf.pm10_df.is_some() {
        req.push(DayColumn {
            name: "pm10_ma".into(),
            values: study.pollutant(|r| r.pm10, conf.pollutant_window),
        });
    }
    if conf.o3_df.is_some() {
        req.push(DayColumn {
            name: "o3_ma".into(),
            values: study.pollutant(|r| r.o3, conf.pollutant_window),
        });
    }
    req
}

/// Append confounder columns evaluated on `rows`.
fn confounder_columns(
    study: &StudyData,
    conf: &ConfounderSpec,
    rows: &[usize],
    pollutants: &[DayColumn],
    names: &mut Vec<String>,
    cols: &mut Vec<Vec<f64>>,
) -> Result<()> {
    let years: Vec<i32> = {
        let mut y: Vec<i32> = rows.iter().map(|&t| study.calendar[t].year).collect();
        y.sort_unstable();
        y.dedup();
        y
    };
    let year_cols: Vec<(String, Vec<f64>)> = years
        .iter()
        .skip(1)
        .map(|&yr| {
            (
                format!("year_{yr}"),
                rows.iter()
                    .map(|&t| f64::from(u8::from(study.calendar[t].year == yr)))
                    .collect(),
            )
        })
        .collect();
    if conf.year_dummies {
        for (n, c) in &year_cols {
            names.push(n.clone());
            cols.push(c.clone());
        }
    }
    if let Some(df) = conf.season_df {
        let dos: Vec<f64> = rows.iter().map(|&t| f64::from(study.calendar[t].day_of_season)).collect();
        let spec = default_knots(&dos, df)?;
        let basis = ncs_basis(&dos, &spec)?;
        for b in 0..basis.ncols() {
            names.push(format!("season_ns{}", b + 1));
            cols.push(basis.column(b).iter().copied().collect());
        }
        if conf.year_season_interaction {
            for (yn, yc) in &year_cols {
                for b in 0..basis.ncols() {
                    names.push(format!("{yn}:season_ns{}", b + 1));
                    cols.push(yc.iter().zip(basis.column(b).iter()).map(|(a, s)| a * s).collect());
                }
            }
        }
    }
    if conf.day_of_week {
        for wd in [
            Weekday::Mon,
            Weekday::Tue,
            Weekday::Wed,
            Weekday::Thu,
            Weekday::Fri,
            Weekday::Sat,
        ] {
            names.push(format!("dow_{wd}"));
            cols.push(
                rows.iter()
                    .map(|&t| f64::from(u8::from(study.calendar[t].weekday == wd)))
                    .collect(),
            );
        }
    }
    if conf.holiday {
        names.push("holiday".into());
        cols.push(
            rows.iter()
                .map(|&t| f64::from(u8::from(study.series.records()[t].holiday)))
                .collect(),
        );
    }
    for (col, df) in pollutants.iter().zip(
        [conf.pm10_df, conf.o3_df]
            .into_iter()
            .flatten(),
    ) {
        let x: Vec<f64> = rows.iter().map(|&t| col.values[t]).collect();
        let spec = default_knots(&x, df)?;
        let basis = ncs_basis(&x, &spec)?;
        let stem = col.name.trim_end_matches("_ma");
        for b in 0..basis.ncols() {
            names.push(format!("{stem}_ns{}", b + 1));
            cols.push(basis.column(b).iter().copied().collect());
        }
    }
    Ok(())
}

fn select_rows(study: &StudyData, required: &[&[f64]]) -> (Vec<usize>, usize) {
    let mut dropped = 0;
    let rows = (0..study.len())
        .filter(|&t| study.in_season[t])
        .filter(|&t| {
            let ok = required.iter().all(|c| c[t].is_finite());
            if !ok {
                dropped += 1;
            }
            ok
        })
        .collect();
    (rows, dropped)
}

/// Assemble the design matrix for `spec` on in-season days.
pub fn build_design(study: &StudyData, vars: &TempVariableSet, spec: &ModelSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    let k = vars.v_len;
    if vars.max_lag_lt < spec.j_l || vars.max_lag_ht < spec.j_h {
        return Err(Error::InvalidConfig(
            "variable set was built with shorter lags than the model requests".into(),
        ));
    }
    if spec.uses_fhw() && study.flags.max_fhw_lag() < spec.p {
        return Err(Error::InvalidConfig(format!(
            "post-episode indicators only reach lag {}",
            study.flags.max_fhw_lag()
        )));
    }
    let hw: Vec<f64> = study.flags.hw.iter().map(|&h| f64::from(u8::from(h))).collect();
    let mut day_cols = vec![DayColumn {
        name: "HW".into(),
        values: hw,
    }];
    let mut splines: Vec<SplineInput> = Vec::new();
    let v_cols = |cols: &mut Vec<DayColumn>| {
        for j in 1..=k {
            cols.push(DayColumn {
                name: format!("V_{j}"),
                values: vars.v.column(j),
            });
        }
    };
    let fhw_cols = |cols: &mut Vec<DayColumn>| {
        for p in 1..=spec.p {
            cols.push(DayColumn {
                name: format!("FHW_{p}"),
                values: (0..study.len())
                    .map(|t| f64::from(u8::from(study.flags.fhw_at(t, p))))
                    .collect(),
            });
        }
    };

    match spec.kind {
        ModelKind::M1 => {}
        ModelKind::M2 => {
            push_lags(&mut day_cols, "LT", &vars.lt, 0..=spec.j_l);
            push_lags(&mut day_cols, "HT", &vars.ht, 0..=spec.j_h);
        }
        ModelKind::M3 => {
            push_lags(&mut day_cols, "LT", &vars.lt, 0..=spec.j_l);
            push_lags(&mut day_cols, "HTs", &vars.ht_star, 0..=k);
            v_cols(&mut day_cols);
        }
        ModelKind::M3Lag => {
            push_lags(&mut day_cols, "LT", &vars.lt, 0..=spec.j_l);
            push_lags(&mut day_cols, "HTsss", &vars.ht_tstar, 0..=k);
            v_cols(&mut day_cols);
            fhw_cols(&mut day_cols);
        }
        ModelKind::M3Spline => {
            let (prefix, lagged) = if spec.p > 0 {
                ("ns_Ttstar", &vars.tstar_tstar)
            } else {
                ("ns_Tstar", &vars.tstar)
            };
            splines.push(SplineInput {
                prefix: "ns_Tstar_l0".into(),
                values: vars.tstar.column(0),
                active: None,
            });
            for l in 1..=k {
                splines.push(SplineInput {
                    prefix: format!("{prefix}_l{l}"),
                    values: lagged.column(l),
                    active: None,
                });
            }
            if spec.v_spline {
                let centered: Vec<f64> = study.temps.iter().map(|t| t - vars.ot).collect();
                let lagged = LagMatrix::lagged(&centered, study.flags.blocks(), k);
                for j in 1..=k {
                    let active: Vec<bool> = (0..study.len())
                        .map(|t| {
                            let day = study.flags.episode_day[t] as usize;
                            let earlier_hw = t >= j && study.flags.hw[t - j];
                            study.flags.hw[t]
                                && day <= j
                                && !(spec.zero_v_across_episodes && earlier_hw)
                        })
                        .collect();
                    let values = (0..study.len())
                        .map(|t| if active[t] { lagged.get(t, j) } else { 0.0 })
                        .collect();
                    splines.push(SplineInput {
                        prefix: format!("Vns_{j}"),
                        values,
                        active: Some(active),
                    });
                }
            } else {
                v_cols(&mut day_cols);
            }
            if spec.p > 0 {
                fhw_cols(&mut day_cols);
            }
        }
    }

    let pollutants = confounder_inputs(study, &spec.confounders);
    let mut required: Vec<&[f64]> = day_cols.iter().map(|c| c.values.as_slice()).collect();
    required.extend(splines.iter().map(|s| s.values.as_slice()));
    required.extend(pollutants.iter().map(|c| c.values.as_slice()));
    let (rows, dropped) = select_rows(study, &required);
    if dropped > 0 {
        log::info!("{}: dropped {dropped} in-season rows with unavailable lags or covariates", spec.kind);
    }
    if rows.is_empty() {
        return Err(Error::TooFewRows { rows: 0, cols: 1 });
    }

    let mut names = vec!["(Intercept)".to_string()];
    let mut cols = vec![vec![1.0; rows.len()]];
    for c in &day_cols {
        names.push(c.name.clone());
        cols.push(rows.iter().map(|&t| c.values[t]).collect());
    }
    if !splines.is_empty() {
        // shared knots from the in-sample distribution of T - OT
        let centered: Vec<f64> = rows.iter().map(|&t| study.temps[t] - vars.ot).collect();
        let knots = default_knots(&centered, spec.temp_df)?;
        for s in &splines {
            spline_columns(&rows, s, &knots, &mut names, &mut cols)?;
        }
    }
    confounder_columns(study, &spec.confounders, &rows, &pollutants, &mut names, &mut cols)?;

    let y = rows.iter().map(|&t| study.deaths[t]).collect();
    let mut design = DesignMatrix::new(names, cols, y)?;
    let collinear = design.collinear_columns(1e-10);
    if !collinear.is_empty() {
        let hint = if collinear.iter().any(|c| c.contains(':') || c.contains("_ns")) {
            "; reduce the seasonal or pollutant spline df"
        } else {
            ""
        };
        log::error!("rank-deficient design: {}{hint}", collinear.join(", "));
        return Err(Error::RankDeficient { columns: collinear });
    }
    design.rows = rows;
    design.dropped = dropped;
    Ok(design)
}

/// Minimum of the fitted same-day temperature risk curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtResult {
    pub ot: f64,
    /// `(temperature, log-RR relative to the minimum)` over the search grid.
    pub grid: Vec<(f64, f64)>,
    /// The curve varies by less than 1e-3 on the log scale across the grid.
    pub low_curvature: bool,
}

/// Fit `ns(T_t) + ns(T_{t-lag}) + confounders` without the heatwave term and
/// return the temperature minimising the same-day spline between the 1st
/// and 99th in-sample percentiles.
pub fn find_ot(study: &StudyData, confounders: &ConfounderSpec, search: &OtSearch) -> Result<OtResult> {
    if search.resolution.is_nan() || search.resolution <= 0.0 {
        return Err(Error::InvalidConfig("OT grid resolution must be positive".into()));
    }
    let lagged = LagMatrix::lagged(&study.temps, study.flags.blocks(), search.lag);
    let lag_col = lagged.column(search.lag);
    let pollutants = confounder_inputs(study, confounders);
    let mut required: Vec<&[f64]> = vec![&lag_col];
    required.extend(pollutants.iter().map(|c| c.values.as_slice()));
    let (rows, _) = select_rows(study, &required);
    let t0: Vec<f64> = rows.iter().map(|&t| study.temps[t]).collect();
    let knots = default_knots(&t0, search.spline_df)?;

    let mut names = vec!["(Intercept)".to_string()];
    let mut cols = vec![vec![1.0; rows.len()]];
    let same_day = SplineInput {
        prefix: "ns_T_l0".into(),
        values: study.temps.clone(),
        active: None,
    };
    spline_columns(&rows, &same_day, &knots, &mut names, &mut cols)?;
    if search.lag > 0 {
        let lag_input = SplineInput {
            prefix: format!("ns_T_l{}", search.lag),
            values: lag_col.clone(),
            active: None,
        };
        spline_columns(&rows, &lag_input, &knots, &mut names, &mut cols)?;
    }
    confounder_columns(study, confounders, &rows, &pollutants, &mut names, &mut cols)?;
    let y = rows.iter().map(|&t| study.deaths[t]).collect();
    let design = DesignMatrix::new(names, cols, y)?;
    let fit = fit_quasipoisson(&design)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
        });
    }

    let lo = quantile(&t0, 0.01, QuantileMethod::Linear)?;
    let hi = quantile(&t0, 0.99, QuantileMethod::Linear)?;
    let step = search.resolution;
    let first = (lo / step).ceil() as i64;
    let last = ((hi / step).floor() as i64).max(first);
    let grid_x: Vec<f64> = (first..=last).map(|i| i as f64 * step).collect();
    let basis = ncs_basis(&grid_x, &knots)?;
    let coefs = &fit.coefficients[1..1 + knots.df()];
    let curve: Vec<f64> = (0..grid_x.len())
        .map(|i| (0..knots.df()).map(|b| basis[(i, b)] * coefs[b]).sum())
        .collect();
    let (imin, &cmin) = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let cmax = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let low_curvature = cmax - cmin < 1e-3;
    if low_curvature {
        log::warn!("temperature risk curve is nearly flat; OT is poorly identified");
    }
    Ok(OtResult {
        ot: grid_x[imin],
        grid: grid_x.iter().zip(&curve).map(|(&x, &c)| (x, c - cmin)).collect(),
        low_curvature,
    })
}

/// Heatwave effect summed with post-episode effects through `through_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSum {
    pub through_lag: usize,
    pub effect: RateRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub dispersion: f64,
    pub deviance: f64,
    pub n_used: usize,
    pub n_dropped: usize,
    pub n_params: usize,
    pub converged: bool,
    pub divergent: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub model: ModelKind,
    pub hw_effect: RateRatio,
    pub lag_sums: Vec<LagSum>,
    pub coefficients: Vec<CoefficientRow>,
    pub diagnostics: Diagnostics,
}

/// Rate ratios for the heatwave term and, when post-episode indicators are
/// in the model, for each cumulative lag sum.
pub fn estimate_effect(fit: &FitResult, spec: &ModelSpec, level: f64, n_dropped: usize) -> Result<EffectReport> {
    let (b, se) = linear_combination(fit, &[("HW", 1.0)])?;
    let hw_effect = rate_ratio(b, se, level);
    let mut lag_sums = Vec::new();
    if spec.uses_fhw() {
        let mut weights: Vec<(String, f64)> = vec![("HW".into(), 1.0)];
        for q in 1..=spec.p {
            weights.push((format!("FHW_{q}"), 1.0));
            let w: Vec<(&str, f64)> = weights.iter().map(|(n, v)| (n.as_str(), *v)).collect();
            let (e, s) = linear_combination(fit, &w)?;
            lag_sums.push(LagSum {
                through_lag: q,
                effect: rate_ratio(e, s, level),
            });
        }
    }
    Ok(EffectReport {
        model: spec.kind,
        hw_effect,
        lag_sums,
        coefficients: fit.coefficient_table(level),
        diagnostics: Diagnostics {
            dispersion: fit.dispersion,
            deviance: fit.deviance,
            n_used: fit.n_used,
            n_dropped,
            n_params: fit.names.len(),
            converged: fit.converged,
            divergent: fit.divergent,
            iterations: fit.iterations,
        },
    })
}

/// Everything produced by one model run.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub ot: f64,
    pub ot_search: Option<OtResult>,
    pub vars: TempVariableSet,
    pub design: DesignMatrix,
    pub fit: FitResult,
    pub report: EffectReport,
}

/// Resolve OT, build the variables and design, fit and report.
pub fn analyze(study: &StudyData, spec: &ModelSpec, level: f64) -> Result<Analysis> {
    spec.validate()?;
    let (ot, ot_search) = match spec.ot {
        OtSource::Fixed(ot) => (ot, None),
        OtSource::Auto => {
            let r = find_ot(study, &spec.confounders, &spec.ot_search)?;
            (r.ot, Some(r))
        }
    };
    let vars = study.variables(spec, ot)?;
    let design = build_design(study, &vars, spec)?;
    let fit = fit_quasipoisson(&design)?;
    let report = estimate_effect(&fit, spec, level, design.dropped)?;
    Ok(Analysis {
        ot,
        ot_search,
        vars,
        design,
        fit,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DailyRecord;
    use chrono::NaiveDate;

    fn excerpt_study() -> StudyData {
        let temps = [
            22.5, 21.0, 21.7, 24.3, 26.0, 26.5, 27.6, 28.0, 28.4, 29.5, 29.1, 28.4, 27.2, 28.7,
            29.3, 28.7, 26.8, 27.3,
        ];
        let start = NaiveDate::from_ymd_opt(2006, 7, 26).unwrap();
        let recs = temps
            .iter()
            .enumerate()
            .map(|(i, &t)| DailyRecord {
                date: start + chrono::Duration::days(i as i64),
                deaths: 10 + (i as u32 % 4),
                tmean: t,
                pm10: None,
                o3: None,
                holiday: false,
            })
            .collect();
        let series = DailySeries::new(recs, "excerpt").unwrap();
        let hw = HeatwaveConfig {
            threshold_override: Some(27.6),
            ..Default::default()
        };
        StudyData::prepare(series, SeasonWindow::summer(), &hw).unwrap()
    }

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            confounders: ConfounderSpec::none(),
            ot: OtSource::Fixed(21.8),
            ..Default::default()
        }
    }

    #[test]
    fn m1_without_confounders_has_two_columns() {
        let s = excerpt_study();
        let sp = spec(ModelKind::M1);
        let vars = s.variables(&sp, 21.8).unwrap();
        let d = build_design(&s, &vars, &sp).unwrap();
        assert_eq!(d.names(), ["(Intercept)", "HW"]);
        assert_eq!(d.n_rows(), 18);
    }

    #[test]
    fn m3_columns_and_excerpt_values() {
        let s = excerpt_study();
        let sp = spec(ModelKind::M3);
        let vars = s.variables(&sp, 21.8).unwrap();
        let d = build_design(&s, &vars, &sp).unwrap();
        assert_eq!(
            d.names(),
            ["(Intercept)", "HW", "LT_l0", "LT_l1", "HTs_l0", "HTs_l1", "V_1"]
        );
        // first day has no lag-1 values
        assert_eq!(d.n_rows(), 17);
        assert_eq!(d.dropped, 1);
        let aug02 = d.rows.iter().position(|&t| t == 7).unwrap();
        let row: Vec<f64> = (0..7).map(|j| d.x()[(aug02, j)]).collect();
        assert_eq!(row[1], 1.0);
        assert_eq!(row[4], 0.0);
        assert_eq!(row[5], 0.0);
        assert!((row[6] - 5.8).abs() <= 0.1 + 1e-9);
    }

    #[test]
    fn m3_lag_and_spline_columns() {
        let s = excerpt_study();
        let sp = spec(ModelKind::M3Lag);
        let vars = s.variables(&sp, 21.8).unwrap();
        let d = build_design(&s, &vars, &sp).unwrap();
        assert_eq!(
            d.names(),
            ["(Intercept)", "HW", "LT_l0", "LT_l1", "HTsss_l0", "HTsss_l1", "V_1", "FHW_1"]
        );
        let sp = ModelSpec {
            temp_df: 2,
            p: 0,
            ..spec(ModelKind::M3Spline)
        };
        let d = build_design(&s, &vars, &sp).unwrap();
        assert_eq!(
            d.names(),
            ["(Intercept)", "HW", "V_1", "ns_Tstar_l0_1", "ns_Tstar_l0_2", "ns_Tstar_l1_1", "ns_Tstar_l1_2"]
        );
    }

    #[test]
    fn model_kind_parsing() {
        assert_eq!("m3_lag".parse::<ModelKind>().unwrap(), ModelKind::M3Lag);
        assert!("M4".parse::<ModelKind>().is_err());
        assert_eq!(ModelKind::M3Spline.to_string(), "M3_SPLINE");
        assert_eq!(serde_json::to_string(&ModelKind::M3Lag).unwrap(), "\"M3_LAG\"");
    }

    #[test]
    fn lags_beyond_seven_are_rejected() {
        let sp = ModelSpec {
            j_l: 8,
            ..spec(ModelKind::M2)
        };
        assert!(sp.validate().is_err());
    }

    #[test]
    fn estimate_effect_sums_lags() {
        use nalgebra::DMatrix;
        let fit = FitResult {
            names: vec!["(Intercept)".into(), "HW".into(), "FHW_1".into()],
            coefficients: vec![4.0, 1.152f64.ln(), (1.208f64 / 1.152).ln()],
            covariance: DMatrix::from_row_slice(3, 3, &[1e-4, 0.0, 0.0, 0.0, 0.0036, -0.001, 0.0, -0.001, 0.0081]),
            unscaled_covariance: DMatrix::identity(3, 3),
            dispersion: 1.0,
            deviance: 0.0,
            fitted: vec![],
            n_used: 100,
            converged: true,
            divergent: false,
            iterations: 3,
        };
        let r = estimate_effect(&fit, &spec(ModelKind::M3Lag), 0.95, 0).unwrap();
        assert!((r.hw_effect.percent_change - 15.2).abs() < 1e-9);
        assert!((r.lag_sums[0].effect.percent_change - 20.8).abs() < 1e-9);
        // delta method: var = 0.0036 + 0.0081 - 2 * 0.001
        let se = (0.0036f64 + 0.0081 - 0.002).sqrt();
        assert!((r.lag_sums[0].effect.se - se).abs() < 1e-12);
        let z = 1.959963984540054;
        let lower = ((1.208f64).ln() - z * se).exp();
        assert!((r.lag_sums[0].effect.lower - lower).abs() < 1e-9);
        assert!(
            (r.hw_effect.percent_change - (r.hw_effect.rr - 1.0) * 100.0).abs() == 0.0
        );

        let zero = FitResult {
            coefficients: vec![4.0, 0.0, 0.0],
            ..fit
        };
        let r = estimate_effect(&zero, &spec(ModelKind::M1), 0.95, 0).unwrap();
        assert_eq!(r.hw_effect.percent_change, 0.0);
        assert!(r.lag_sums.is_empty());
    }
}
