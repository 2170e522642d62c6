use heatwave_core::models::{analyze, ModelKind, ModelSpec, OtSource, StudyData};
use heatwave_core::simulation::{
    generate_replicate, generate_series, heatwave_to_ot_ratio, run_comparison, write_replicates,
    SimConfig,
};
use heatwave_core::{ConfounderSpec, HeatwaveConfig, VLength};

#[test]
fn heatwave_days_carry_the_true_rate_ratio() {
    let cfg = SimConfig {
        n_years: 200,
        start_year: 1801,
        true_ht_slopes: vec![0.0],
        true_lt_slopes: vec![0.0],
        ..SimConfig::default()
    };
    let (series, truth) = generate_series(&cfg).unwrap();
    let ratio = heatwave_to_ot_ratio(&series, &truth, 0.5);
    assert!((ratio - 1.15).abs() < 0.03, "ratio {ratio}");
}

#[test]
fn same_seed_gives_identical_reports() {
    let cfg = SimConfig::default();
    let render = |cfg: &SimConfig| {
        let r = run_comparison(cfg, 12).unwrap();
        let mut out = serde_json::to_vec(&r).unwrap();
        write_replicates(&mut out, &r).unwrap();
        out
    };
    assert_eq!(render(&cfg), render(&cfg));
    let other = SimConfig {
        seed: cfg.seed + 1,
        ..cfg.clone()
    };
    assert_ne!(render(&cfg), render(&other));
}

#[test]
fn stronger_lagged_heat_widens_the_m3_m1_gap() {
    let gaps: Vec<f64> = [0.0, 0.02, 0.04]
        .iter()
        .map(|&s| {
            let cfg = SimConfig {
                true_ht_slopes: vec![0.02, s],
                ..SimConfig::default()
            };
            let r = run_comparison(&cfg, 100).unwrap();
            r.model("M3").unwrap().mean_estimate - r.model("M1").unwrap().mean_estimate
        })
        .collect();
    assert!(gaps[0] < gaps[1] && gaps[1] < gaps[2], "gaps {gaps:?}");
}

#[test]
fn post_episode_effect_is_recovered_by_the_lagged_model() {
    let cfg = SimConfig {
        true_fhw_log_rr: 0.1,
        ..SimConfig::default()
    };
    let r = run_comparison(&cfg, 100).unwrap();
    let sum = r.model("M3_LAG_SUM1").unwrap();
    assert!((sum.truth - (1.15f64.ln() + 0.1)).abs() < 1e-12);
    assert!(sum.bias.abs() < 0.03, "bias {}", sum.bias);
    assert!(r.model("M3_LAG").unwrap().bias.abs() < 0.03);
}

#[test]
fn spline_and_piecewise_m3_agree_on_average() {
    let cfg = SimConfig::default();
    let hw = HeatwaveConfig::default();
    let (mut piecewise, mut spline) = (0.0, 0.0);
    let n = 40;
    for i in 0..n {
        let (series, _) = generate_replicate(&cfg, i).unwrap();
        let study = StudyData::prepare(series, cfg.window, &hw).unwrap();
        let base = ModelSpec {
            kind: ModelKind::M3,
            k: VLength::Fixed(1),
            confounders: ConfounderSpec::none(),
            ot: OtSource::Fixed(cfg.true_ot),
            p: 0,
            ..ModelSpec::default()
        };
        let s = ModelSpec {
            kind: ModelKind::M3Spline,
            ..base.clone()
        };
        piecewise += analyze(&study, &base, 0.95).unwrap().report.hw_effect.log_estimate;
        spline += analyze(&study, &s, 0.95).unwrap().report.hw_effect.log_estimate;
    }
    let (piecewise, spline) = (piecewise / n as f64, spline / n as f64);
    let truth = 1.15f64.ln();
    assert!((piecewise - truth).abs() < 0.04, "piecewise {piecewise}");
    assert!((spline - truth).abs() < 0.04, "spline {spline}");
}
