//! Heatwave effect estimation for daily time series.
//!
//! The crate covers the whole pipeline: loading daily mortality and
//! temperature records, flagging heatwave episodes by intensity and
//! duration, building the heatwave-conditional temperature adjustment
//! columns, fitting quasi-Poisson regressions and reporting heatwave rate
//! ratios against an optimal-temperature reference. A Monte-Carlo harness
//! checks estimator bias on synthetic series with a known effect.

pub mod data;
pub mod error;
pub mod glm;
pub mod heatwave;
pub mod models;
pub mod quantile;
pub mod simulation;
pub mod spline;
pub mod transform;

pub use data::{
    calendar_features, load_series, moving_average, read_series, restrict_to_season, Blocks,
    CalendarFeature, ColumnMap, DailyRecord, DailySeries, SeasonWindow,
};
pub use error::{Error, Result};
pub use glm::{
    fit_quasipoisson, linear_combination, rate_ratio, DesignMatrix, FitOptions, FitResult,
    RateRatio,
};
pub use heatwave::{
    build_fhw, flag_heatwaves, percentile_threshold, Comparison, HeatwaveConfig, HeatwaveFlags,
};
pub use models::{
    build_design, estimate_effect, find_ot, ConfounderSpec, EffectReport, ModelKind, ModelSpec,
    OtResult, StudyData,
};
pub use quantile::{quantile, QuantileMethod};
pub use simulation::{generate_series, run_comparison, SimConfig, SimReport, SimTruth};
pub use spline::{default_knots, ncs_basis, SplineBasis, SplineSpec};
pub use transform::{
    build_ht_dstar, build_ht_star, build_ht_tstar, build_tstar_family, build_v, build_variables,
    split_lt_ht, LagMatrix, TempVariableSet, TransformConfig, VLength,
};
