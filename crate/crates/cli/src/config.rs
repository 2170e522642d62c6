//! Run configuration file and command-line overrides.

use std::path::{Path, PathBuf};

use heatwave_core::models::{ModelSpec, OtSource, MAX_LAG};
use heatwave_core::simulation::SimConfig;
use heatwave_core::{ColumnMap, HeatwaveConfig, ModelKind, SeasonWindow, VLength};
use serde::{Deserialize, Serialize};

use crate::exit::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub columns: ColumnMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub replicates: usize,
    /// Separate SimConfig JSON file; takes precedence over `config`.
    pub config_path: Option<PathBuf>,
    pub config: SimConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            replicates: 500,
            config_path: None,
            config: SimConfig::default(),
        }
    }
}

/// Everything a run needs. Unset keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    pub season: SeasonWindow,
    pub heatwave: HeatwaveConfig,
    pub model: ModelSpec,
    pub level: f64,
    /// Read from the file but not echoed, so results do not depend on where
    /// they are written.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::default(),
            season: SeasonWindow::summer(),
            heatwave: HeatwaveConfig::default(),
            model: ModelSpec::default(),
            level: 0.95,
            out: PathBuf::from("."),
            seed: None,
            simulate: SimulateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("--config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("--config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Failure::usage(format!("level {} must lie in (0, 1)", self.level)));
        }
        self.heatwave.validate().map_err(|e| Failure::usage(e.to_string()))?;
        self.model.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(())
    }

    /// Drop pollutant terms whose column is not mapped.
    pub fn resolve(&mut self) {
        let conf = &mut self.model.confounders;
        if self.input.columns.pm10.is_none() && conf.pm10_df.take().is_some() {
            log::info!("no pm10 column mapped; pm10 adjustment disabled");
        }
        if self.input.columns.o3.is_none() && conf.o3_df.take().is_some() {
            log::info!("no o3 column mapped; o3 adjustment disabled");
        }
    }

    pub fn input_path(&self) -> Result<&Path, Failure> {
        let path = self
            .input
            .path
            .as_deref()
            .ok_or_else(|| Failure::usage("no input file: pass --input or set input.path"))?;
        if !path.exists() {
            return Err(Failure::data(format!("input file {} does not exist", path.display())));
        }
        Ok(path)
    }
}

/// Flags shared by the data subcommands. Each one overrides a config key.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Input CSV file (input.path).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Date column header (input.columns.date).
    #[arg(long)]
    pub date_col: Option<String>,
    /// Death count column header (input.columns.deaths).
    #[arg(long)]
    pub deaths_col: Option<String>,
    /// Mean temperature column header (input.columns.tmean).
    #[arg(long)]
    pub tmean_col: Option<String>,
    /// PM10 column header (input.columns.pm10).
    #[arg(long)]
    pub pm10_col: Option<String>,
    /// Ozone column header (input.columns.o3).
    #[arg(long)]
    pub o3_col: Option<String>,
    /// Holiday indicator column header (input.columns.holiday); enables the holiday term.
    #[arg(long)]
    pub holiday_col: Option<String>,
    /// Season window as MM-DD:MM-DD (season).
    #[arg(long, value_parser = parse_season)]
    pub season: Option<SeasonWindow>,
    /// Heatwave percentile in (0, 1) (heatwave.percentile).
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Fixed heatwave threshold, °C (heatwave.threshold_override).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Minimum heatwave duration, days (heatwave.min_duration).
    #[arg(long)]
    pub min_duration: Option<usize>,
    /// Model kind: M1, M2, M3, M3_LAG or M3_SPLINE (model.kind).
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    /// Maximum low-temperature lag (model.j_l).
    #[arg(long, value_parser = parse_lag)]
    pub j_l: Option<usize>,
    /// Maximum high-temperature lag (model.j_h).
    #[arg(long, value_parser = parse_lag)]
    pub j_h: Option<usize>,
    /// Pre-episode vector length: an integer, match_ht or max_duration_minus_one (model.k).
    #[arg(long, value_parser = parse_v_len)]
    pub k: Option<VLength>,
    /// Post-episode lags (model.p).
    #[arg(long, value_parser = parse_lag)]
    pub p: Option<usize>,
    /// Optimal temperature in °C, or "auto" (model.ot).
    #[arg(long, value_parser = parse_ot)]
    pub ot: Option<OtSource>,
    /// Confidence level (level).
    #[arg(long)]
    pub level: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.input {
            cfg.input.path = Some(v.clone());
        }
        if let Some(v) = &self.date_col {
            cfg.input.columns.date = v.clone();
        }
        if let Some(v) = &self.deaths_col {
            cfg.input.columns.deaths = v.clone();
        }
        if let Some(v) = &self.tmean_col {
            cfg.input.columns.tmean = v.clone();
        }
        if let Some(v) = &self.pm10_col {
            cfg.input.columns.pm10 = Some(v.clone());
        }
        if let Some(v) = &self.o3_col {
            cfg.input.columns.o3 = Some(v.clone());
        }
        if let Some(v) = &self.holiday_col {
            cfg.input.columns.holiday = Some(v.clone());
            cfg.model.confounders.holiday = true;
        }
        if let Some(v) = self.season {
            cfg.season = v;
        }
        if let Some(v) = self.percentile {
            cfg.heatwave.percentile = v;
        }
        if let Some(v) = self.threshold {
            cfg.heatwave.threshold_override = Some(v);
        }
        if let Some(v) = self.min_duration {
            cfg.heatwave.min_duration = v;
        }
        if let Some(v) = self.model {
            cfg.model.kind = v;
        }
        if let Some(v) = self.j_l {
            cfg.model.j_l = v;
        }
        if let Some(v) = self.j_h {
            cfg.model.j_h = v;
        }
        if let Some(v) = self.k {
            cfg.model.k = v;
        }
        if let Some(v) = self.p {
            cfg.model.p = v;
        }
        if let Some(v) = self.ot {
            cfg.model.ot = v;
        }
        if let Some(v) = self.level {
            cfg.level = v;
        }
    }
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: heatwave_core::Error| e.to_string())
}

fn parse_lag(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v > MAX_LAG {
        return Err(format!("lag {v} exceeds the maximum {MAX_LAG}"));
    }
    Ok(v)
}

fn parse_v_len(s: &str) -> Result<VLength, String> {
    match s {
        "match_ht" => Ok(VLength::MatchHt),
        "max_duration_minus_one" => Ok(VLength::MaxDurationMinusOne),
        _ => parse_lag(s).map(VLength::Fixed),
    }
}

fn parse_ot(s: &str) -> Result<OtSource, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(OtSource::Auto);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(OtSource::Fixed)
        .ok_or_else(|| format!("expected a temperature or 'auto', got '{s}'"))
}

fn parse_season(s: &str) -> Result<SeasonWindow, String> {
    let md = |part: &str| -> Result<(u32, u32), String> {
        let (m, d) = part
            .split_once('-')
            .ok_or_else(|| format!("expected MM-DD, got '{part}'"))?;
        Ok((
            m.parse().map_err(|_| format!("bad month in '{part}'"))?,
            d.parse().map_err(|_| format!("bad day in '{part}'"))?,
        ))
    };
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected MM-DD:MM-DD, got '{s}'"))?;
    SeasonWindow::new(md(a)?, md(b)?).map_err(|e| e.to_string())
}
