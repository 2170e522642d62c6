//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use heatwave_core::transform::write_table;
use heatwave_core::{
    build_variables, flag_heatwaves, load_series, ColumnMap, Comparison, DailyRecord, DailySeries,
    DesignMatrix, TransformConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Parsed CSV with a header row.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Table {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().unwrap().iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.unwrap().iter().map(String::from).collect())
            .collect();
        Table { header, rows }
    }

    pub fn column_index(&self) -> HashMap<&str, usize> {
        self.header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect()
    }
}

const BINARY_COLUMNS: [&str; 2] = ["HW", "FHW1"];

/// Compare a produced variable table with the expected fixture. Binary
/// columns must match exactly, numeric columns within `tol`. Returns the
/// number of cells checked.
pub fn compare_with_fixture(actual: &str, expected: &str, tol: f64) -> Result<usize, String> {
    let actual = Table::parse(actual);
    let expected = Table::parse(expected);
    let a_idx = actual.column_index();
    let by_date: HashMap<&str, &Vec<String>> =
        actual.rows.iter().map(|r| (r[a_idx["date"]].as_str(), r)).collect();
    let mut checked = 0;
    for erow in &expected.rows {
        let date = erow[0].as_str();
        let arow = by_date.get(date).ok_or_else(|| format!("no output row for {date}"))?;
        for (j, col) in expected.header.iter().enumerate().skip(1) {
            let ai = *a_idx.get(col.as_str()).ok_or_else(|| format!("output lacks column {col}"))?;
            let (got, want) = (&arow[ai], &erow[j]);
            if BINARY_COLUMNS.contains(&col.as_str()) {
                if got != want {
                    return Err(format!("{date} {col}: got {got}, expected {want}"));
                }
            } else {
                let g: f64 = got.parse().map_err(|_| format!("{date} {col}: '{got}' is not a number"))?;
                let w: f64 = want.parse().unwrap();
                if (g - w).abs() > tol + 1e-9 {
                    return Err(format!("{date} {col}: got {g}, expected {w} ± {tol}"));
                }
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Run flag + build on the excerpt with the illustration settings and return
/// the variable table as CSV text.
pub fn build_excerpt_table() -> String {
    let series = load_series(fixture("excerpt_input.csv"), &ColumnMap::default()).unwrap();
    let temps = series.temps();
    let flags = flag_heatwaves(&temps, &series.blocks(), 27.6, 2, Comparison::Strict).with_fhw(1);
    let cfg = TransformConfig {
        ot: 21.8,
        ..Default::default()
    };
    let vars = build_variables(&temps, &flags, &cfg).unwrap();
    let mut buf = Vec::new();
    write_table(&mut buf, &series.dates(), &temps, &flags, &vars).unwrap();
    String::from_utf8(buf).unwrap()
}

/// Poisson maximum likelihood by damped Newton-Raphson on the full Hessian,
/// solved with Gaussian elimination. `x` is row-major.
pub fn newton_oracle(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let loglik = |b: &[f64]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(row, &yi)| {
                let eta: f64 = row.iter().zip(b).map(|(a, c)| a * c).sum();
                yi * eta - eta.exp()
            })
            .sum()
    };
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut beta = vec![0.0; p];
    beta[0] = mean.max(0.1).ln();
    for _ in 0..200 {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (row, &yi) in x.iter().zip(y) {
            let mu = row.iter().zip(&beta).map(|(a, c)| a * c).sum::<f64>().exp();
            for j in 0..p {
                grad[j] += (yi - mu) * row[j];
                for k in 0..p {
                    hess[j][k] += mu * row[j] * row[k];
                }
            }
        }
        let step = gauss_solve(hess, grad);
        let base = loglik(&beta);
        let mut scale = 1.0;
        let mut next: Vec<f64>;
        loop {
            next = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            if loglik(&next) >= base - 1e-12 * base.abs() || scale < 1e-8 {
                break;
            }
            scale *= 0.5;
        }
        let size = step.iter().map(|s| (s * scale).abs()).fold(0.0, f64::max);
        beta = next;
        if size < 1e-14 {
            break;
        }
    }
    beta
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            let pivot_row = a[c].clone();
            for (x, p) in a[r][c..].iter_mut().zip(&pivot_row[c..]) {
                *x -= f * p;
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Random Poisson regression design with an intercept. Returns the design
/// and its rows.
pub fn random_design(seed: u64) -> (DesignMatrix, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(40..=300);
    let p = rng.random_range(1..=10);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let truth: Vec<f64> = (0..p)
        .map(|j| if j == 0 { rng.random_range(0.5..3.0) } else { rng.random_range(-0.3..0.3) })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..p)
                .map(|j| if j == 0 { 1.0 } else { normal.sample(&mut rng) })
                .collect()
        })
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| {
            let mu = r.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>().exp();
            Poisson::new(mu).unwrap().sample(&mut rng)
        })
        .collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let cols = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    (DesignMatrix::new(names, cols, y).unwrap(), rows)
}

/// Copy of `series` with every temperature shifted by `delta`.
pub fn shifted(series: &DailySeries, delta: f64) -> DailySeries {
    let recs: Vec<DailyRecord> = series
        .records()
        .iter()
        .map(|r| DailyRecord {
            tmean: r.tmean + delta,
            ..r.clone()
        })
        .collect();
    DailySeries::new(recs, series.provenance()).unwrap()
}
