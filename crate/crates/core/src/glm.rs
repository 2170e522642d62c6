//! Quasi-Poisson log-link regression fitted by iteratively reweighted least
//! squares, with Pearson-scaled covariance and inference on linear
//! combinations of coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Named-column regression design with a count response.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    /// Source day index of each row.
    pub rows: Vec<usize>,
    /// Candidate rows removed before assembly (unavailable lags, missing
    /// covariates).
    pub dropped: usize,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, response: Vec<f64>) -> Result<Self> {
        let n = response.len();
        if names.len() != columns.len() {
            return Err(Error::InvalidConfig(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "column '{name}' has {} rows, response has {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "column '{name}' has a missing value at row {i}"
                )));
            }
        }
        if let Some(i) = response.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "response at row {i} is not a non-negative count"
            )));
        }
        let p = columns.len();
        let x = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
        Ok(Self {
            names,
            x,
            y: DVector::from_vec(response),
            rows: (0..n).collect(),
            dropped: 0,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.x.column(j).iter().copied().collect())
    }

    /// Columns whose removal is needed for full column rank, in design
    /// order. Each listed column is (numerically) a combination of columns
    /// before it.
    pub fn collinear_columns(&self, rank_tol: f64) -> Vec<String> {
        let n = self.x.nrows();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut bad = Vec::new();
        for (j, name) in self.names.iter().enumerate() {
            let col = self.x.column(j).into_owned();
            let norm0 = col.norm();
            if norm0 == 0.0 {
                bad.push(name.clone());
                continue;
            }
            let mut v = col / norm0;
            // two passes of Gram-Schmidt for stability
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&v);
                    v.axpy(-c, q, 1.0);
                }
            }
            let r = v.norm();
            if r <= rank_tol.max(f64::EPSILON * n as f64) {
                bad.push(name.clone());
            } else {
                basis.push(v / r);
            }
        }
        bad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative deviance change for convergence.
    pub tolerance: f64,
    /// Relative residual norm below which a column counts as collinear.
    pub rank_tolerance: f64,
    /// Absolute log-scale coefficient above which the fit is flagged divergent.
    pub divergence_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tolerance: 1e-10,
            rank_tolerance: 1e-10,
            divergence_bound: 30.0,
        }
    }
}

/// Result of a quasi-Poisson fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// `(X' W X)^-1 * dispersion`.
    pub covariance: DMatrix<f64>,
    /// `(X' W X)^-1`, the plain Poisson covariance.
    pub unscaled_covariance: DMatrix<f64>,
    pub dispersion: f64,
    pub deviance: f64,
    pub fitted: Vec<f64>,
    pub n_used: usize,
    pub converged: bool,
    pub divergent: bool,
    pub iterations: usize,
}

impl FitResult {
    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCoefficient(name.to_string()))
    }

    pub fn coef(&self, name: &str) -> Result<f64> {
        Ok(self.coefficients[self.index(name)?])
    }

    /// Quasi-Poisson standard error.
    pub fn se(&self, name: &str) -> Result<f64> {
        let i = self.index(name)?;
        Ok(self.covariance[(i, i)].sqrt())
    }

    pub fn poisson_se(&self, name: &str) -> Result<f64> {
        let i = self.index(name)?;
        Ok(self.unscaled_covariance[(i, i)].sqrt())
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn coefficient_table(&self, level: f64) -> Vec<CoefficientRow> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let estimate = self.coefficients[i];
                let se = self.covariance[(i, i)].sqrt();
                let rr = rate_ratio(estimate, se, level);
                CoefficientRow {
                    name: name.clone(),
                    estimate,
                    se,
                    z: estimate / se,
                    rr: rr.rr,
                    lower: rr.lower,
                    upper: rr.upper,
                }
            })
            .collect()
    }

    pub fn summary(&self, level: f64) -> FitSummary {
        FitSummary {
            coefficients: self.coefficient_table(level),
            dispersion: self.dispersion,
            deviance: self.deviance,
            n_used: self.n_used,
            n_params: self.names.len(),
            converged: self.converged,
            divergent: self.divergent,
            iterations: self.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub rr: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Serializable view of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub coefficients: Vec<CoefficientRow>,
    pub dispersion: f64,
    pub deviance: f64,
    pub n_used: usize,
    pub n_params: usize,
    pub converged: bool,
    pub divergent: bool,
    pub iterations: usize,
}

fn poisson_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    2.0 * y
        .iter()
        .zip(mu.iter())
        .map(|(&y, &m)| {
            let term = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
            term - (y - m)
        })
        .sum::<f64>()
}

/// Weighted least-squares step: returns `(beta, R)` for `sqrt(w) X = Q R`.
fn weighted_solve(
    x: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let sw = w.map(f64::sqrt);
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= sw[i];
    }
    let zw = z.component_mul(&sw);
    let qr = xw.qr();
    let qtz = qr.q().tr_mul(&zw);
    let r = qr.r();
    let beta = r.solve_upper_triangular(&qtz)?;
    Some((beta, r))
}

pub fn fit_quasipoisson(design: &DesignMatrix) -> Result<FitResult> {
    fit_quasipoisson_with(design, &FitOptions::default())
}

pub fn fit_quasipoisson_with(design: &DesignMatrix, opts: &FitOptions) -> Result<FitResult> {
    let (n, p) = (design.n_rows(), design.n_cols());
    if n <= p {
        return Err(Error::TooFewRows { rows: n, cols: p });
    }
    let collinear = design.collinear_columns(opts.rank_tolerance);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }
    let x = design.x();
    let y = design.y();

    let mut mu = y.map(|v| v + 0.5);
    let mut eta = mu.map(f64::ln);
    let mut deviance = poisson_deviance(y, &mu);
    let mut beta = DVector::zeros(p);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let z = DVector::from_fn(n, |i, _| eta[i] + (y[i] - mu[i]) / mu[i]);
        let Some((b, _)) = weighted_solve(x, &mu, &z) else {
            break;
        };
        beta = b;
        eta = x * &beta;
        mu = eta.map(f64::exp);
        let new_dev = poisson_deviance(y, &mu);
        if !new_dev.is_finite() {
            break;
        }
        let change = (new_dev - deviance).abs() / (new_dev.abs() + 0.1);
        deviance = new_dev;
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }

    let (_, r) = weighted_solve(x, &mu, &eta).ok_or(Error::NotConverged { iterations })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::NotConverged { iterations })?;
    let unscaled = &r_inv * r_inv.transpose();
    let unscaled = (&unscaled + unscaled.transpose()) * 0.5;
    let pearson: f64 = y
        .iter()
        .zip(mu.iter())
        .map(|(&y, &m)| (y - m).powi(2) / m)
        .sum();
    let dispersion = pearson / (n - p) as f64;
    let divergent = beta.iter().any(|b| !b.is_finite() || b.abs() > opts.divergence_bound);
    if divergent {
        log::warn!("quasi-Poisson fit has a coefficient beyond ±{}", opts.divergence_bound);
    }
    if !converged {
        log::warn!("quasi-Poisson fit did not converge in {iterations} iterations");
    }

    Ok(FitResult {
        names: design.names().to_vec(),
        coefficients: beta.iter().copied().collect(),
        covariance: &unscaled * dispersion,
        unscaled_covariance: unscaled,
        dispersion,
        deviance,
        fitted: mu.iter().copied().collect(),
        n_used: n,
        converged,
        divergent,
        iterations,
    })
}

/// Estimate and quasi-Poisson standard error of `sum(w_i * coef_i)`.
pub fn linear_combination(fit: &FitResult, weights: &[(&str, f64)]) -> Result<(f64, f64)> {
    let p = fit.names.len();
    let mut w = DVector::zeros(p);
    for (name, weight) in weights {
        w[fit.index(name)?] += weight;
    }
    let beta = DVector::from_column_slice(&fit.coefficients);
    let estimate = w.dot(&beta);
    let var = (w.transpose() * &fit.covariance * &w)[(0, 0)];
    Ok((estimate, var.max(0.0).sqrt()))
}

/// A log-scale estimate on the rate-ratio and percent-change scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRatio {
    pub log_estimate: f64,
    pub se: f64,
    pub level: f64,
    pub rr: f64,
    pub lower: f64,
    pub upper: f64,
    pub percent_change: f64,
    pub percent_lower: f64,
    pub percent_upper: f64,
}

impl RateRatio {
    /// Whether the interval excludes no change.
    pub fn excludes_null(&self) -> bool {
        self.lower > 1.0 || self.upper < 1.0
    }
}

/// Two-sided standard-normal critical value for `level`.
pub fn normal_critical(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// `exp(estimate)` with a normal-quantile interval on the log scale.
pub fn rate_ratio(estimate: f64, se: f64, level: f64) -> RateRatio {
    assert!(level > 0.0 && level < 1.0, "confidence level must lie in (0, 1)");
    let z = normal_critical(level);
    let rr = estimate.exp();
    let lower = (estimate - z * se).exp();
    let upper = (estimate + z * se).exp();
    RateRatio {
        log_estimate: estimate,
        se,
        level,
        rr,
        lower,
        upper,
        percent_change: (rr - 1.0) * 100.0,
        percent_lower: (lower - 1.0) * 100.0,
        percent_upper: (upper - 1.0) * 100.0,
    }
}
