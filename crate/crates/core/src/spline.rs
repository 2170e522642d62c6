//! Natural cubic spline bases.
//!
//! A natural cubic spline with `K` knots (two boundary plus `K - 2`
//! interior) is cubic between knots, has continuous second derivatives and
//! is linear outside the boundary knots. Without the constant function the
//! space has dimension `K - 1 = df`. Two parameterisations of the same space
//! are offered; fitted values do not depend on the choice.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile::{quantile_sorted, QuantileMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplineBasis {
    /// Cardinal interpolating splines at the knots, first one dropped.
    #[default]
    Cardinal,
    /// Truncated-power form on the range-standardised variable.
    TruncatedPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub interior_knots: Vec<f64>,
    pub boundary_knots: (f64, f64),
    pub basis: SplineBasis,
}

impl SplineSpec {
    pub fn new(interior_knots: Vec<f64>, boundary_knots: (f64, f64), basis: SplineBasis) -> Result<Self> {
        let spec = Self {
            interior_knots,
            boundary_knots,
            basis,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let knots = self.knots();
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::DegenerateKnots("non-finite knot".into()));
        }
        if let Some(w) = knots.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateKnots(format!(
                "knots must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
        Ok(())
    }

    /// Number of basis columns.
    pub fn df(&self) -> usize {
        self.interior_knots.len() + 1
    }

    /// Boundary and interior knots in increasing order.
    pub fn knots(&self) -> Vec<f64> {
        let mut k = Vec::with_capacity(self.interior_knots.len() + 2);
        k.push(self.boundary_knots.0);
        k.extend_from_slice(&self.interior_knots);
        k.push(self.boundary_knots.1);
        k
    }

    pub fn with_basis(&self, basis: SplineBasis) -> Self {
        Self {
            basis,
            ..self.clone()
        }
    }
}

/// Boundary knots at the range of `x`, `df - 1` interior knots at equally
/// spaced quantiles. Coincident knots are merged; fewer than `df - 1`
/// distinct interior positions is an error.
pub fn default_knots(x: &[f64], df: usize) -> Result<SplineSpec> {
    if df < 1 {
        return Err(Error::InvalidConfig("spline df must be at least 1".into()));
    }
    let mut sorted: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 2 {
        return Err(Error::DegenerateKnots("fewer than two finite values".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi <= lo {
        return Err(Error::DegenerateKnots(format!("all values equal {lo}")));
    }
    let guard = 1e-9 * (hi - lo);
    let mut interior: Vec<f64> = Vec::with_capacity(df - 1);
    for i in 1..df {
        let q = quantile_sorted(&sorted, i as f64 / df as f64, QuantileMethod::Linear);
        let clear_of_bounds = q > lo + guard && q < hi - guard;
        let clear_of_prev = interior.last().is_none_or(|&p| q > p + guard);
        if clear_of_bounds && clear_of_prev {
            interior.push(q);
        }
    }
    if interior.len() < df - 1 {
        return Err(Error::DegenerateKnots(format!(
            "only {} distinct interior knots for df = {df}; reduce df",
            interior.len()
        )));
    }
    SplineSpec::new(interior, (lo, hi), SplineBasis::default())
}

/// Evaluate the basis at each `x`: an `x.len() x df` matrix.
pub fn ncs_basis(x: &[f64], spec: &SplineSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite spline argument {bad}")));
    }
    let knots = spec.knots();
    let df = spec.df();
    let mut out = DMatrix::zeros(x.len(), df);
    match spec.basis {
        SplineBasis::Cardinal => {
            let cardinal = Cardinal::new(&knots);
            let mut row = vec![0.0; knots.len()];
            for (i, &xi) in x.iter().enumerate() {
                cardinal.eval_all(xi, &mut row);
                for j in 0..df {
                    out[(i, j)] = row[j + 1];
                }
            }
        }
        SplineBasis::TruncatedPower => {
            let (lo, hi) = spec.boundary_knots;
            let scale = hi - lo;
            let u: Vec<f64> = knots.iter().map(|k| (k - lo) / scale).collect();
            let last = u.len() - 1;
            let d = |k: usize, v: f64| {
                let cube = |a: f64| a.max(0.0).powi(3);
                (cube(v - u[k]) - cube(v - u[last])) / (u[last] - u[k])
            };
            for (i, &xi) in x.iter().enumerate() {
                let v = (xi - lo) / scale;
                out[(i, 0)] = v;
                for k in 0..df - 1 {
                    out[(i, k + 1)] = d(k, v) - d(last - 1, v);
                }
            }
        }
    }
    Ok(out)
}

/// Natural cubic cardinal splines: function `j` interpolates the unit vector
/// `e_j` at the knots.
struct Cardinal<'a> {
    knots: &'a [f64],
    /// `second[j][i]`: second derivative of function `j` at knot `i`.
    second: Vec<Vec<f64>>,
}

impl<'a> Cardinal<'a> {
    fn new(knots: &'a [f64]) -> Self {
        let m = knots.len();
        let second = (0..m)
            .map(|j| {
                let y: Vec<f64> = (0..m).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
                natural_second_derivatives(knots, &y)
            })
            .collect();
        Self { knots, second }
    }

    fn eval_all(&self, x: f64, out: &mut [f64]) {
        let k = self.knots;
        let m = k.len();
        for (j, s) in self.second.iter().enumerate() {
            let y = |i: usize| if i == j { 1.0 } else { 0.0 };
            out[j] = if x <= k[0] {
                let h = k[1] - k[0];
                let slope = (y(1) - y(0)) / h - h * (2.0 * s[0] + s[1]) / 6.0;
                y(0) + slope * (x - k[0])
            } else if x >= k[m - 1] {
                let h = k[m - 1] - k[m - 2];
                let slope = (y(m - 1) - y(m - 2)) / h + h * (s[m - 2] + 2.0 * s[m - 1]) / 6.0;
                y(m - 1) + slope * (x - k[m - 1])
            } else {
                let i = k.partition_point(|&kn| kn <= x).saturating_sub(1).min(m - 2);
                let h = k[i + 1] - k[i];
                let a = k[i + 1] - x;
                let b = x - k[i];
                s[i] * a.powi(3) / (6.0 * h)
                    + s[i + 1] * b.powi(3) / (6.0 * h)
                    + (y(i) - s[i] * h * h / 6.0) * a / h
                    + (y(i + 1) - s[i + 1] * h * h / 6.0) * b / h
            };
        }
    }
}

/// Second derivatives at the knots of the natural cubic interpolant of `y`
/// (zero at both ends), via the tridiagonal system.
fn natural_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = x.len();
    let mut s = vec![0.0; m];
    if m < 3 {
        return s;
    }
    let n = m - 2;
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for r in 0..n {
        let i = r + 1;
        diag[r] = 2.0 * (h[i - 1] + h[i]);
        upper[r] = h[i];
        rhs[r] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
    }
    // Thomas algorithm; sub-diagonal entry for row r is h[r].
    for r in 1..n {
        let w = h[r] / diag[r - 1];
        diag[r] -= w * upper[r - 1];
        rhs[r] -= w * rhs[r - 1];
    }
    s[n] = rhs[n - 1] / diag[n - 1];
    for r in (0..n - 1).rev() {
        s[r + 1] = (rhs[r] - upper[r] * s[r + 2]) / diag[r];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn spec(basis: SplineBasis) -> SplineSpec {
        SplineSpec::new(vec![17.0, 22.0, 27.0], (10.0, 34.0), basis).unwrap()
    }

    fn bases() -> [SplineSpec; 2] {
        [spec(SplineBasis::Cardinal), spec(SplineBasis::TruncatedPower)]
    }

    /// Least-squares residual norm of `y` on `[1, B]`.
    fn ls_residual(b: &DMatrix<f64>, y: &[f64]) -> f64 {
        let n = b.nrows();
        let x = DMatrix::from_fn(n, b.ncols() + 1, |i, j| if j == 0 { 1.0 } else { b[(i, j - 1)] });
        let y = DVector::from_column_slice(y);
        let coef = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
        (y - x * coef).amax()
    }

    /// Natural cubic interpolant by solving the full piecewise-cubic
    /// coefficient system (4 unknowns per interval).
    fn oracle_interpolant(knots: &[f64], y: &[f64]) -> impl Fn(f64) -> f64 {
        let m = knots.len() - 1;
        let n = 4 * m;
        let mut a = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        let mut r = 0;
        // piece i: c0 + c1 (x-k_i) + c2 (x-k_i)^2 + c3 (x-k_i)^3
        for i in 0..m {
            let h = knots[i + 1] - knots[i];
            a[(r, 4 * i)] = 1.0;
            rhs[r] = y[i];
            r += 1;
            for p in 0..4 {
                a[(r, 4 * i + p)] = h.powi(p as i32);
            }
            rhs[r] = y[i + 1];
            r += 1;
            if i + 1 < m {
                // first and second derivative continuity
                a[(r, 4 * i + 1)] = 1.0;
                a[(r, 4 * i + 2)] = 2.0 * h;
                a[(r, 4 * i + 3)] = 3.0 * h * h;
                a[(r, 4 * (i + 1) + 1)] = -1.0;
                r += 1;
                a[(r, 4 * i + 2)] = 2.0;
                a[(r, 4 * i + 3)] = 6.0 * h;
                a[(r, 4 * (i + 1) + 2)] = -2.0;
                r += 1;
            }
        }
        a[(r, 2)] = 2.0;
        r += 1;
        let h = knots[m] - knots[m - 1];
        a[(r, 4 * (m - 1) + 2)] = 2.0;
        a[(r, 4 * (m - 1) + 3)] = 6.0 * h;
        let c = a.lu().solve(&rhs).unwrap();
        let knots = knots.to_vec();
        move |x: f64| {
            let i = knots.partition_point(|&k| k <= x).saturating_sub(1).min(m - 1);
            let d = x - knots[i];
            c[4 * i] + c[4 * i + 1] * d + c[4 * i + 2] * d * d + c[4 * i + 3] * d * d * d
        }
    }

    #[test]
    fn column_count_is_df() {
        for s in bases() {
            assert_eq!(ncs_basis(&[15.0, 20.0], &s).unwrap().ncols(), 4);
        }
    }

    #[test]
    fn linear_functions_are_in_span() {
        let x: Vec<f64> = (0..200).map(|i| 5.0 + 0.17 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.7 * v).collect();
        for s in bases() {
            let b = ncs_basis(&x, &s).unwrap();
            assert!(ls_residual(&b, &y) < 1e-8);
        }
    }

    #[test]
    fn reproduces_natural_interpolant() {
        let s = spec(SplineBasis::Cardinal);
        let knots = s.knots();
        let y = [1.0, -0.5, 2.0, 0.3, 1.1];
        let f = oracle_interpolant(&knots, &y);
        let x: Vec<f64> = (0..241).map(|i| 10.0 + 0.1 * i as f64).collect();
        let target: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        for s in bases() {
            let b = ncs_basis(&x, &s).unwrap();
            assert!(ls_residual(&b, &target) < 1e-8);
        }
    }

    #[test]
    fn linear_beyond_boundary() {
        for s in bases() {
            for x0 in [-5.0, 2.0, 36.0, 50.0] {
                let h = 0.5;
                let b = ncs_basis(&[x0 - h, x0, x0 + h], &s).unwrap();
                for j in 0..s.df() {
                    let d2 = (b[(0, j)] - 2.0 * b[(1, j)] + b[(2, j)]) / (h * h);
                    assert!(d2.abs() < 1e-6, "basis {:?} col {j} at {x0}: {d2}", s.basis);
                }
            }
        }
    }

    #[test]
    fn second_derivative_continuous_at_knots() {
        let h = 1e-3;
        for s in bases() {
            for &k in &s.interior_knots {
                let pts: Vec<f64> = (-3..=3).map(|i| k + i as f64 * h).collect();
                let b = ncs_basis(&pts, &s).unwrap();
                for j in 0..s.df() {
                    let left = (b[(0, j)] - 2.0 * b[(1, j)] + b[(2, j)]) / (h * h);
                    let right = (b[(4, j)] - 2.0 * b[(5, j)] + b[(6, j)]) / (h * h);
                    let scale = 1.0 + left.abs().max(right.abs());
                    // one-sided second differences shift by O(h) * third derivative
                    assert!((left - right).abs() / scale < 1e-2);
                }
            }
        }
    }

    #[test]
    fn cardinal_functions_interpolate_unit_vectors() {
        let s = spec(SplineBasis::Cardinal);
        let b = ncs_basis(&s.knots(), &s).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let expect = if i == j + 1 { 1.0 } else { 0.0 };
                assert!((b[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_knot_placement() {
        let x: Vec<f64> = (0..=100).map(f64::from).collect();
        let s = default_knots(&x, 4).unwrap();
        assert_eq!(s.interior_knots, vec![25.0, 50.0, 75.0]);
        assert_eq!(s.boundary_knots, (0.0, 100.0));
        let s = default_knots(&x, 2).unwrap();
        assert_eq!(s.interior_knots, vec![50.0]);
        assert_eq!(s.df(), 2);
    }

    #[test]
    fn degenerate_knots_are_errors() {
        assert!(SplineSpec::new(vec![5.0, 5.0], (0.0, 10.0), SplineBasis::Cardinal).is_err());
        assert!(SplineSpec::new(vec![11.0], (0.0, 10.0), SplineBasis::Cardinal).is_err());
        assert!(default_knots(&[3.0; 50], 3).is_err());
        let mut ties = vec![0.0; 90];
        ties.extend((0..10).map(f64::from));
        assert!(default_knots(&ties, 4).is_err());
        assert!(ncs_basis(&[f64::NAN], &spec(SplineBasis::Cardinal)).is_err());
    }

    proptest! {
        #[test]
        fn tie_heavy_vectors_give_valid_knots_or_error(
            base in proptest::collection::vec(0u8..6, 5..80),
            df in 2usize..6,
        ) {
            let x: Vec<f64> = base.iter().map(|&b| f64::from(b)).collect();
            match default_knots(&x, df) {
                Ok(s) => {
                    prop_assert_eq!(s.df(), df);
                    prop_assert!(s.validate().is_ok());
                }
                Err(e) => prop_assert!(matches!(e, Error::DegenerateKnots(_))),
            }
        }

        #[test]
        fn bases_span_the_same_space(x in proptest::collection::vec(0.0f64..40.0, 30..60)) {
            let a = ncs_basis(&x, &spec(SplineBasis::Cardinal)).unwrap();
            let b = ncs_basis(&x, &spec(SplineBasis::TruncatedPower)).unwrap();
            for j in 0..b.ncols() {
                let col: Vec<f64> = b.column(j).iter().copied().collect();
                prop_assert!(ls_residual(&a, &col) < 1e-8);
            }
        }
    }
}
