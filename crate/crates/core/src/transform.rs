//! Temperature-derived regression columns.
//!
//! All lagged quantities are stored as [`LagMatrix`] values: one row per day,
//! one column per lag starting at lag 0. A cell is `NaN` when the lagged day
//! falls outside the day's contiguous block; such rows are dropped when a
//! design matrix is assembled.
//!
//! Sign convention: the low-temperature column is `min(T - OT, 0)` and the
//! high-temperature column is `max(T - OT, 0)`.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::Blocks;
use crate::error::{Error, Result};
use crate::heatwave::HeatwaveFlags;

/// Row-major `days x (max_lag + 1)` matrix of lagged values.
#[derive(Debug, Clone, PartialEq)]
pub struct LagMatrix {
    rows: usize,
    width: usize,
    data: Vec<f64>,
}

impl LagMatrix {
    pub fn filled(rows: usize, max_lag: usize, value: f64) -> Self {
        Self {
            rows,
            width: max_lag + 1,
            data: vec![value; rows * (max_lag + 1)],
        }
    }

    /// Lag columns `0..=max_lag` of `series`, respecting block boundaries.
    pub fn lagged(series: &[f64], blocks: &Blocks, max_lag: usize) -> Self {
        let mut m = Self::filled(series.len(), max_lag, f64::NAN);
        for t in 0..series.len() {
            for l in 0..=max_lag {
                if let Some(s) = blocks.lag(t, l) {
                    m.set(t, l, series[s]);
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn max_lag(&self) -> usize {
        self.width - 1
    }

    #[inline]
    pub fn get(&self, t: usize, lag: usize) -> f64 {
        self.data[t * self.width + lag]
    }

    #[inline]
    pub fn set(&mut self, t: usize, lag: usize, v: f64) {
        self.data[t * self.width + lag] = v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn column(&self, lag: usize) -> Vec<f64> {
        (0..self.rows).map(|t| self.get(t, lag)).collect()
    }

    fn map_rows(&self, mut f: impl FnMut(usize, &mut [f64])) -> Self {
        let mut out = self.clone();
        for t in 0..self.rows {
            f(t, &mut out.data[t * self.width..(t + 1) * self.width]);
        }
        out
    }
}

/// Length of the pre-episode heat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VLength {
    /// Same as the maximum high-temperature lag.
    #[default]
    MatchHt,
    /// Longest episode in the data minus one (at least 1).
    MaxDurationMinusOne,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub ot: f64,
    pub max_lag_lt: usize,
    pub max_lag_ht: usize,
    pub v_len: VLength,
    /// Zero the j-th pre-episode component when day `t - j` is itself a
    /// heatwave day of an earlier episode.
    pub zero_v_across_episodes: bool,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            ot: 21.8,
            max_lag_lt: 1,
            max_lag_ht: 1,
            v_len: VLength::MatchHt,
            zero_v_across_episodes: false,
        }
    }
}

impl TransformConfig {
    pub fn resolve_v_len(&self, flags: &HeatwaveFlags) -> usize {
        match self.v_len {
            VLength::MatchHt => self.max_lag_ht.max(1),
            VLength::MaxDurationMinusOne => flags.max_duration().saturating_sub(1).max(1),
            VLength::Fixed(k) => k.max(1),
        }
    }
}

/// Every constructed temperature column for one optimal temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct TempVariableSet {
    pub ot: f64,
    /// Low-temperature lags `0..=max_lag_lt`.
    pub lt: LagMatrix,
    /// High-temperature lags `0..=max(max_lag_ht, v_len)`.
    pub ht: LagMatrix,
    /// High-temperature lags zeroed on current heatwave days, `0..=v_len`.
    pub ht_star: LagMatrix,
    /// Lags of the heatwave-zeroed lag-0 high-temperature series.
    pub ht_dstar: LagMatrix,
    /// `ht_dstar` with pre-episode components removed on heatwave days.
    pub ht_tstar: LagMatrix,
    /// Pre-episode heat vector; column 0 is always zero, columns `1..=v_len`
    /// hold the components.
    pub v: LagMatrix,
    pub tstar: LagMatrix,
    pub tstar_dstar: LagMatrix,
    pub tstar_tstar: LagMatrix,
    pub max_lag_lt: usize,
    pub max_lag_ht: usize,
    pub v_len: usize,
}

/// `(min(T - OT, 0), max(T - OT, 0))` per day.
pub fn split_lt_ht(temps: &[f64], ot: f64) -> (Vec<f64>, Vec<f64>) {
    temps
        .iter()
        .map(|&t| {
            let d = t - ot;
            (d.min(0.0), d.max(0.0))
        })
        .unzip()
}

/// Zero every lag of `ht` on days that are themselves heatwave days.
pub fn build_ht_star(ht: &LagMatrix, hw: &[bool]) -> LagMatrix {
    ht.map_rows(|t, row| {
        if hw[t] {
            row.fill(0.0);
        }
    })
}

/// Lags `0..=max_lag` of the series `ht0[t] * 1[hw_t = 0]`.
pub fn build_ht_dstar(ht0: &[f64], hw: &[bool], blocks: &Blocks, max_lag: usize) -> LagMatrix {
    let zeroed: Vec<f64> = ht0
        .iter()
        .zip(hw)
        .map(|(&h, &is_hw)| if is_hw { 0.0 } else { h })
        .collect();
    LagMatrix::lagged(&zeroed, blocks, max_lag)
}

/// Pre-episode heat vector. On the k-th day of an episode the components
/// `k..=v_len` carry `ht` at those lags and earlier components are zero.
pub fn build_v(
    ht: &LagMatrix,
    flags: &HeatwaveFlags,
    v_len: usize,
    zero_across_episodes: bool,
) -> LagMatrix {
    assert!(ht.max_lag() >= v_len, "ht lags do not reach v_len");
    let mut v = LagMatrix::filled(ht.rows(), v_len, 0.0);
    for t in 0..ht.rows() {
        if !flags.hw[t] {
            continue;
        }
        let k = flags.episode_day[t] as usize;
        for j in k.max(1)..=v_len {
            let earlier_hw = t >= j && flags.hw[t - j];
            let value = if zero_across_episodes && earlier_hw {
                0.0
            } else {
                ht.get(t, j)
            };
            v.set(t, j, value);
        }
    }
    v
}

/// Subtract the pre-episode components from lagged columns on heatwave days.
pub fn build_ht_tstar(dstar: &LagMatrix, v: &LagMatrix, hw: &[bool]) -> LagMatrix {
    dstar.map_rows(|t, row| {
        if hw[t] {
            for (l, cell) in row.iter_mut().enumerate().skip(1) {
                if l <= v.max_lag() {
                    *cell -= v.get(t, l);
                }
            }
        }
    })
}

/// Spline-ready counterparts: `(T*, T**, T***)`.
///
/// `T*` conditions every lag on the current day's flag, `T**` lags the
/// series `(T_t - OT) * 1[hw_t = 0]`, and `T***` removes pre-episode
/// components from `T**` on heatwave days.
pub fn build_tstar_family(
    temps: &[f64],
    ot: f64,
    flags: &HeatwaveFlags,
    max_lag: usize,
    v: &LagMatrix,
) -> (LagMatrix, LagMatrix, LagMatrix) {
    let centered: Vec<f64> = temps.iter().map(|t| t - ot).collect();
    let lagged = LagMatrix::lagged(&centered, flags.blocks(), max_lag);
    let tstar = build_ht_star(&lagged, &flags.hw);
    let dstar = build_ht_dstar(&centered, &flags.hw, flags.blocks(), max_lag);
    let tstar_tstar = build_ht_tstar(&dstar, v, &flags.hw);
    (tstar, dstar, tstar_tstar)
}

/// Construct the full variable set from temperatures and heatwave flags.
pub fn build_variables(
    temps: &[f64],
    flags: &HeatwaveFlags,
    config: &TransformConfig,
) -> Result<TempVariableSet> {
    if !config.ot.is_finite() {
        return Err(Error::InvalidConfig("optimal temperature is not finite".into()));
    }
    if temps.len() != flags.len() {
        return Err(Error::InvalidConfig(format!(
            "{} temperatures but {} heatwave flags",
            temps.len(),
            flags.len()
        )));
    }
    let blocks = flags.blocks();
    let v_len = config.resolve_v_len(flags);
    let ht_width = config.max_lag_ht.max(v_len);
    let (lt0, ht0) = split_lt_ht(temps, config.ot);
    let lt = LagMatrix::lagged(&lt0, blocks, config.max_lag_lt);
    let ht = LagMatrix::lagged(&ht0, blocks, ht_width);

    let ht_star = build_ht_star(&LagMatrix::lagged(&ht0, blocks, v_len), &flags.hw);
    let ht_dstar = build_ht_dstar(&ht0, &flags.hw, blocks, v_len);
    let v = build_v(&ht, flags, v_len, config.zero_v_across_episodes);
    let ht_tstar = build_ht_tstar(&ht_dstar, &v, &flags.hw);
    let (tstar, tstar_dstar, tstar_tstar) =
        build_tstar_family(temps, config.ot, flags, v_len, &v);

    Ok(TempVariableSet {
        ot: config.ot,
        lt,
        ht,
        ht_star,
        ht_dstar,
        ht_tstar,
        v,
        tstar,
        tstar_dstar,
        tstar_tstar,
        max_lag_lt: config.max_lag_lt,
        max_lag_ht: config.max_lag_ht,
        v_len,
    })
}

pub(crate) fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return String::new();
    }
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    match s {
        "-0" | "" => "0".to_string(),
        s => s.to_string(),
    }
}

/// Column names of the variable table, in output order.
pub fn table_header(flags: &HeatwaveFlags, vars: &TempVariableSet) -> Vec<String> {
    let mut h = vec!["date".to_string(), "HW".to_string()];
    h.extend((1..=flags.max_fhw_lag()).map(|p| format!("FHW{p}")));
    h.push("T".into());
    h.extend((0..=vars.lt.max_lag()).map(|l| format!("T_LT_l{l}")));
    h.extend((0..=vars.ht.max_lag()).map(|l| format!("T_HT_l{l}")));
    h.extend((0..=vars.v_len).map(|l| format!("T_HTs_l{l}")));
    h.extend((1..=vars.v_len).map(|l| format!("T_HTss_l{l}")));
    h.extend((1..=vars.v_len).map(|l| format!("T_HTsss_l{l}")));
    h.extend((1..=vars.v_len).map(|j| format!("V_{j}")));
    h.extend((0..=vars.v_len).map(|l| format!("T_star_l{l}")));
    h.extend((1..=vars.v_len).map(|l| format!("T_dstar_l{l}")));
    h.extend((1..=vars.v_len).map(|l| format!("T_tstar_l{l}")));
    h
}

/// Write the per-day variable table as CSV. Unavailable lags are empty cells.
pub fn write_table<W: Write>(
    writer: W,
    dates: &[NaiveDate],
    temps: &[f64],
    flags: &HeatwaveFlags,
    vars: &TempVariableSet,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(table_header(flags, vars))?;
    let k = vars.v_len;
    for t in 0..temps.len() {
        let mut rec = vec![dates[t].to_string(), (flags.hw[t] as u8).to_string()];
        rec.extend((1..=flags.max_fhw_lag()).map(|p| (flags.fhw_at(t, p) as u8).to_string()));
        rec.push(fmt_num(temps[t]));
        rec.extend(vars.lt.row(t).iter().map(|&x| fmt_num(x)));
        rec.extend(vars.ht.row(t).iter().map(|&x| fmt_num(x)));
        rec.extend(vars.ht_star.row(t).iter().map(|&x| fmt_num(x)));
        rec.extend((1..=k).map(|l| fmt_num(vars.ht_dstar.get(t, l))));
        rec.extend((1..=k).map(|l| fmt_num(vars.ht_tstar.get(t, l))));
        rec.extend((1..=k).map(|j| fmt_num(vars.v.get(t, j))));
        rec.extend(vars.tstar.row(t).iter().map(|&x| fmt_num(x)));
        rec.extend((1..=k).map(|l| fmt_num(vars.tstar_dstar.get(t, l))));
        rec.extend((1..=k).map(|l| fmt_num(vars.tstar_tstar.get(t, l))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<table>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatwave::{flag_heatwaves, Comparison};
    use proptest::prelude::*;

    // 2006-07-26 .. 2006-08-12
    const EXCERPT: [f64; 18] = [
        22.5, 21.0, 21.7, 24.3, 26.0, 26.5, 27.6, 28.0, 28.4, 29.5, 29.1, 28.4, 27.2, 28.7, 29.3,
        28.7, 26.8, 27.3,
    ];
    const AUG02: usize = 7;
    const AUG03: usize = 8;
    const AUG07: usize = 12;
    const AUG12: usize = 17;

    fn excerpt_vars() -> (HeatwaveFlags, TempVariableSet) {
        let flags = flag_heatwaves(&EXCERPT, &Blocks::contiguous(18), 27.6, 2, Comparison::Strict)
            .with_fhw(1);
        let vars = build_variables(&EXCERPT, &flags, &TransformConfig::default()).unwrap();
        (flags, vars)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 0.1 + 1e-9
    }

    #[test]
    fn split_examples() {
        let (lt, ht) = split_lt_ht(&[21.0, 24.3, 21.8], 21.8);
        assert!((lt[0] + 0.8).abs() < 1e-12 && ht[0] == 0.0);
        assert!(lt[1] == 0.0 && (ht[1] - 2.5).abs() < 1e-12);
        assert!(lt[2] == 0.0 && ht[2] == 0.0);
    }

    #[test]
    fn ht_star_and_dstar_examples() {
        let (_, v) = excerpt_vars();
        assert!(close(v.ht.get(AUG02, 1), 5.8));
        assert_eq!(v.ht_star.get(AUG02, 1), 0.0);
        assert!(close(v.ht.get(AUG07, 1), 6.7));
        assert!(close(v.ht_star.get(AUG07, 1), 6.7));
        assert!(close(v.ht_dstar.get(AUG02, 1), 5.8));
        assert_eq!(v.ht_dstar.get(AUG03, 1), 0.0);
    }

    #[test]
    fn v_and_tstar_examples() {
        let (_, v) = excerpt_vars();
        assert!(close(v.v.get(AUG02, 1), 5.8));
        assert_eq!(v.v.get(AUG03, 1), 0.0);
        assert!(v.ht_tstar.get(AUG02, 1).abs() < 1e-12);
        assert!(close(v.ht_tstar.get(AUG12, 1), 5.0));
        assert!(close(v.tstar.get(1, 0), -0.8));
        assert_eq!(v.tstar.get(AUG02, 0), 0.0);
        assert!(close(v.tstar_dstar.get(AUG02, 1), 5.8));
        assert!(v.tstar_tstar.get(AUG02, 1).abs() < 1e-12);
    }

    #[test]
    fn first_row_lags_are_unavailable() {
        let (_, v) = excerpt_vars();
        assert!(v.lt.get(0, 1).is_nan());
        assert!(v.ht_dstar.get(0, 1).is_nan());
    }

    #[test]
    fn v_length_options() {
        let flags = flag_heatwaves(&EXCERPT, &Blocks::contiguous(18), 27.6, 2, Comparison::Strict);
        let cfg = TransformConfig {
            v_len: VLength::MaxDurationMinusOne,
            ..Default::default()
        };
        assert_eq!(cfg.resolve_v_len(&flags), 4);
        let vars = build_variables(&EXCERPT, &flags, &cfg).unwrap();
        // Aug 8 is day 1 of the second episode; lag 2 reaches Aug 6 (hw).
        let aug08 = 13;
        assert!(close(vars.v.get(aug08, 2), 6.7));
        let zeroed = build_variables(
            &EXCERPT,
            &flags,
            &TransformConfig {
                zero_v_across_episodes: true,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(zeroed.v.get(aug08, 2), 0.0);
        assert!(close(zeroed.v.get(aug08, 1), 5.5));
    }

    #[test]
    fn no_heatwave_stretch_dstar_equals_ht() {
        let temps = [20.0, 22.0, 25.0, 26.0, 24.0];
        let flags = flag_heatwaves(&temps, &Blocks::contiguous(5), 27.6, 2, Comparison::Strict);
        let vars = build_variables(&temps, &flags, &TransformConfig::default()).unwrap();
        for t in 1..5 {
            assert_eq!(vars.ht_dstar.get(t, 1), vars.ht.get(t, 1));
            assert_eq!(vars.ht_tstar.row(t), vars.ht_dstar.row(t));
        }
    }

    #[test]
    fn table_header_layout() {
        let (f, v) = excerpt_vars();
        let h = table_header(&f, &v).join(",");
        assert_eq!(
            h,
            "date,HW,FHW1,T,T_LT_l0,T_LT_l1,T_HT_l0,T_HT_l1,T_HTs_l0,T_HTs_l1,T_HTss_l1,\
             T_HTsss_l1,V_1,T_star_l0,T_star_l1,T_dstar_l1,T_tstar_l1"
        );
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(5.800000000000001), "5.8");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(f64::NAN), "");
        assert_eq!(fmt_num(-0.8), "-0.8");
        assert_eq!(fmt_num(28.0), "28");
    }

    proptest! {
        #[test]
        fn structural_invariants(
            temps in proptest::collection::vec(15.0f64..35.0, 2..120),
            ot in 18.0f64..26.0,
            k in 1usize..4,
            zero in proptest::bool::ANY,
            shift in -5.0f64..5.0,
        ) {
            let n = temps.len();
            let blocks = Blocks::contiguous(n);
            let flags = flag_heatwaves(&temps, &blocks, 27.0, 2, Comparison::Strict);
            let cfg = TransformConfig {
                ot,
                max_lag_lt: k,
                max_lag_ht: k,
                v_len: VLength::Fixed(k),
                zero_v_across_episodes: zero,
            };
            let vars = build_variables(&temps, &flags, &cfg).unwrap();
            for t in 0..n {
                let lt = vars.lt.get(t, 0);
                let ht = vars.ht.get(t, 0);
                prop_assert!(lt <= 0.0 && ht >= 0.0);
                prop_assert!((lt + ht - (temps[t] - ot)).abs() < 1e-12);
                if flags.hw[t] {
                    prop_assert!(vars.ht_star.row(t).iter().all(|&x| x == 0.0));
                    prop_assert_eq!(vars.tstar.get(t, 0), 0.0);
                    for l in 1..=k {
                        let d = vars.ht_dstar.get(t, l);
                        if d.is_finite() {
                            prop_assert!((vars.ht_tstar.get(t, l) + vars.v.get(t, l) - d).abs() < 1e-12);
                        }
                    }
                } else {
                    prop_assert!(vars.v.row(t).iter().all(|&x| x == 0.0));
                }
            }

            // translation invariance of every column
            let shifted: Vec<f64> = temps.iter().map(|x| x + shift).collect();
            let flags2 = flag_heatwaves(&shifted, &blocks, 27.0 + shift, 2, Comparison::Strict);
            prop_assume!(flags2.hw == flags.hw);
            let vars2 = build_variables(&shifted, &flags2, &TransformConfig { ot: ot + shift, ..cfg }).unwrap();
            let pairs = [
                (&vars.lt, &vars2.lt), (&vars.ht, &vars2.ht), (&vars.ht_star, &vars2.ht_star),
                (&vars.ht_dstar, &vars2.ht_dstar), (&vars.ht_tstar, &vars2.ht_tstar), (&vars.v, &vars2.v),
                (&vars.tstar, &vars2.tstar), (&vars.tstar_dstar, &vars2.tstar_dstar),
                (&vars.tstar_tstar, &vars2.tstar_tstar),
            ];
            for (a, b) in pairs {
                for t in 0..n {
                    for (x, y) in a.row(t).iter().zip(b.row(t)) {
                        prop_assert!((x.is_nan() && y.is_nan()) || (x - y).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
