//! Subcommand bodies.

use std::fmt::Write as _;

use heatwave_core::models::{analyze, find_ot, OtResult, OtSource};
use heatwave_core::simulation::{run_comparison, write_replicates, SimConfig, SimReport};
use heatwave_core::transform::write_table;
use heatwave_core::{flag_heatwaves, load_series, DailySeries, EffectReport, HeatwaveFlags, StudyData};
use serde::Serialize;

use crate::config::RunConfig;
use crate::exit::Failure;
use crate::output::{write_atomic, write_json, Echoed};

fn load(cfg: &RunConfig) -> Result<DailySeries, Failure> {
    let path = cfg.input_path()?;
    Ok(load_series(path, &cfg.input.columns)?)
}

/// Threshold over every loaded day and flags with post-episode lags `1..=p`.
fn flags_for(cfg: &RunConfig, series: &DailySeries) -> Result<HeatwaveFlags, Failure> {
    let temps = series.temps();
    let threshold = cfg.heatwave.resolve_threshold(&temps)?;
    Ok(flag_heatwaves(
        &temps,
        &series.blocks(),
        threshold,
        cfg.heatwave.min_duration,
        cfg.heatwave.comparison,
    )
    .with_fhw(cfg.model.p))
}

fn resolve_ot(cfg: &RunConfig, series: &DailySeries) -> Result<(f64, Option<OtResult>), Failure> {
    match cfg.model.ot {
        OtSource::Fixed(ot) => Ok((ot, None)),
        OtSource::Auto => {
            let study = StudyData::prepare(series.clone(), cfg.season, &cfg.heatwave)?;
            let r = find_ot(&study, &cfg.model.confounders, &cfg.model.ot_search)?;
            Ok((r.ot, Some(r)))
        }
    }
}

#[derive(Serialize)]
struct ThresholdResult {
    threshold: f64,
    percentile: f64,
    source: &'static str,
    n_days: usize,
}

pub fn threshold(cfg: &RunConfig) -> Result<(), Failure> {
    let series = load(cfg)?;
    let threshold = cfg.heatwave.resolve_threshold(&series.temps())?;
    let source = if cfg.heatwave.threshold_override.is_some() {
        "override"
    } else {
        "percentile"
    };
    println!(
        "threshold {threshold} °C ({source}, percentile {})",
        cfg.heatwave.percentile
    );
    let result = ThresholdResult {
        threshold,
        percentile: cfg.heatwave.percentile,
        source,
        n_days: series.len(),
    };
    write_json(&cfg.out, "threshold.json", &Echoed { config: cfg, result })?;
    Ok(())
}

#[derive(Serialize)]
struct Episode {
    start: String,
    end: String,
    days: usize,
}

#[derive(Serialize)]
struct FlagResult {
    threshold: f64,
    n_days: usize,
    n_heatwave_days: usize,
    episodes: Vec<Episode>,
}

pub fn flag(cfg: &RunConfig) -> Result<(), Failure> {
    let series = load(cfg)?;
    let flags = flags_for(cfg, &series)?;
    let dates = series.dates();
    let mut csv = String::from("date,T,HW");
    for p in 1..=flags.max_fhw_lag() {
        write!(csv, ",FHW{p}").unwrap();
    }
    csv.push('\n');
    for (t, rec) in series.records().iter().enumerate() {
        write!(csv, "{},{},{}", rec.date, rec.tmean, u8::from(flags.hw[t])).unwrap();
        for p in 1..=flags.max_fhw_lag() {
            write!(csv, ",{}", u8::from(flags.fhw_at(t, p))).unwrap();
        }
        csv.push('\n');
    }
    write_atomic(&cfg.out, "flags.csv", csv.as_bytes())?;
    let result = FlagResult {
        threshold: flags.threshold,
        n_days: series.len(),
        n_heatwave_days: flags.hw.iter().filter(|&&h| h).count(),
        episodes: flags
            .episodes
            .iter()
            .map(|r| Episode {
                start: dates[r.start].to_string(),
                end: dates[r.end - 1].to_string(),
                days: r.len(),
            })
            .collect(),
    };
    println!(
        "threshold {} °C: {} heatwave days in {} episodes",
        result.threshold,
        result.n_heatwave_days,
        result.episodes.len()
    );
    write_json(&cfg.out, "flags.json", &Echoed { config: cfg, result })?;
    Ok(())
}

pub fn build(cfg: &RunConfig) -> Result<(), Failure> {
    let series = load(cfg)?;
    let flags = flags_for(cfg, &series)?;
    let (ot, _) = resolve_ot(cfg, &series)?;
    let temps = series.temps();
    let vars = heatwave_core::build_variables(&temps, &flags, &cfg.model.transform_config(ot))?;
    let mut buf = Vec::new();
    write_table(&mut buf, &series.dates(), &temps, &flags, &vars)?;
    write_atomic(&cfg.out, "variables.csv", &buf)?;
    println!("built {} rows at OT {ot} °C", series.len());
    Ok(())
}

#[derive(Serialize)]
struct OtSummary {
    ot: f64,
    low_curvature: bool,
    grid_points: usize,
}

pub fn ot(cfg: &RunConfig) -> Result<(), Failure> {
    let series = load(cfg)?;
    let study = StudyData::prepare(series, cfg.season, &cfg.heatwave)?;
    let r = find_ot(&study, &cfg.model.confounders, &cfg.model.ot_search)?;
    let mut csv = String::from("temperature,log_rr\n");
    for (x, c) in &r.grid {
        writeln!(csv, "{x:.4},{c:e}").unwrap();
    }
    write_atomic(&cfg.out, "ot_grid.csv", csv.as_bytes())?;
    println!("OT {:.1} °C", r.ot);
    let result = OtSummary {
        ot: r.ot,
        low_curvature: r.low_curvature,
        grid_points: r.grid.len(),
    };
    write_json(&cfg.out, "ot.json", &Echoed { config: cfg, result })?;
    Ok(())
}

#[derive(Serialize)]
struct FitOutput {
    threshold: f64,
    ot: f64,
    ot_low_curvature: Option<bool>,
    report: EffectReport,
}

pub fn fit(cfg: &RunConfig) -> Result<(), Failure> {
    let series = load(cfg)?;
    let study = StudyData::prepare(series, cfg.season, &cfg.heatwave)?;
    let a = analyze(&study, &cfg.model, cfg.level)?;
    let mut csv = String::from("name,estimate,se,z,rr,lower,upper\n");
    for c in &a.report.coefficients {
        writeln!(
            csv,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            c.name, c.estimate, c.se, c.z, c.rr, c.lower, c.upper
        )
        .unwrap();
    }
    write_atomic(&cfg.out, "coefficients.csv", csv.as_bytes())?;
    let hw = &a.report.hw_effect;
    println!(
        "{} HW effect: {:.1}% ({:.1}, {:.1})",
        a.report.model, hw.percent_change, hw.percent_lower, hw.percent_upper
    );
    for s in &a.report.lag_sums {
        println!(
            "  lag 0..{} sum: {:.1}% ({:.1}, {:.1})",
            s.through_lag, s.effect.percent_change, s.effect.percent_lower, s.effect.percent_upper
        );
    }
    let d = a.report.diagnostics.clone();
    let result = FitOutput {
        threshold: study.threshold,
        ot: a.ot,
        ot_low_curvature: a.ot_search.map(|r| r.low_curvature),
        report: a.report,
    };
    write_json(&cfg.out, "report.json", &Echoed { config: cfg, result })?;
    if !d.converged || d.divergent {
        return Err(Failure::not_converged(format!(
            "fit flagged after {} iterations (converged: {}, divergent: {}); report written",
            d.iterations, d.converged, d.divergent
        )));
    }
    Ok(())
}

fn sim_config(cfg: &RunConfig) -> Result<SimConfig, Failure> {
    let mut sim = match &cfg.simulate.config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("--sim-config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("--sim-config {}: {e}", path.display())))?
        }
        None => cfg.simulate.config.clone(),
    };
    if let Some(seed) = cfg.seed {
        sim.seed = seed;
    }
    Ok(sim)
}

pub fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let sim = sim_config(cfg)?;
    let report: SimReport = run_comparison(&sim, cfg.simulate.replicates)?;
    let mut buf = Vec::new();
    write_replicates(&mut buf, &report)?;
    write_atomic(&cfg.out, "sim_replicates.csv", &buf)?;
    for m in &report.models {
        println!(
            "{:<12} mean {:+.4} (truth {:+.4}) sd {:.4} coverage {:.3} rejection {:.3}",
            m.model, m.mean_estimate, m.truth, m.empirical_sd, m.coverage, m.rejection_rate
        );
    }
    if report.failure_flag {
        log::warn!("{} of {} replicates failed", report.n_failed, report.n_replicates);
    }
    write_json(&cfg.out, "sim_report.json", &Echoed { config: cfg, result: &report })?;
    Ok(())
}
