//! Sparse regression of the vector field on a polynomial dictionary by
//! sequentially thresholded least squares.
//!
//! Column order of the dictionary is fixed: the constant, then `x_0..x_{d-1}`,
//! then `x_i·x_j` for `i ≤ j` in row-major order. Checkpoints rely on it.

use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::linalg::{ridge_least_squares, Matrix, Vector};
use crate::net::PolynomialCoefficients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub include_constant: bool,
    pub include_linear: bool,
    pub include_quadratic: bool,
}

impl Default for DictionarySpec {
    fn default() -> Self {
        DictionarySpec {
            include_constant: true,
            include_linear: true,
            include_quadratic: true,
        }
    }
}

impl DictionarySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.include_constant || self.include_linear || self.include_quadratic) {
            return Err(Error::InvalidArgument("dictionary has no term family enabled".into()));
        }
        Ok(())
    }

    pub fn n_columns(&self, d: usize) -> usize {
        usize::from(self.include_constant)
            + if self.include_linear { d } else { 0 }
            + if self.include_quadratic { d * (d + 1) / 2 } else { 0 }
    }

    /// Human-readable column labels, e.g. `1`, `x0`, `x0*x2`.
    pub fn column_names(&self, d: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_columns(d));
        if self.include_constant {
            names.push("1".to_string());
        }
        if self.include_linear {
            names.extend((0..d).map(|i| format!("x{i}")));
        }
        if self.include_quadratic {
            for i in 0..d {
                names.extend((i..d).map(|j| format!("x{i}*x{j}")));
            }
        }
        names
    }

    fn fill_row(&self, x: &[f64], out: &mut [f64]) {
        let mut c = 0;
        if self.include_constant {
            out[c] = 1.0;
            c += 1;
        }
        if self.include_linear {
            out[c..c + x.len()].copy_from_slice(x);
            c += x.len();
        }
        if self.include_quadratic {
            for i in 0..x.len() {
                for j in i..x.len() {
                    out[c] = x[i] * x[j];
                    c += 1;
                }
            }
        }
    }
}

/// One dictionary row per state.
pub fn build_dictionary(states: &[Vector], spec: &DictionarySpec) -> Result<Matrix> {
    spec.validate()?;
    let first = states.first().ok_or(Error::EmptyInput("build_dictionary"))?;
    let d = first.dim();
    let cols = spec.n_columns(d);
    let mut m = Matrix::zeros(states.len(), cols);
    for (r, x) in states.iter().enumerate() {
        if x.dim() != d {
            return Err(Error::dim("build_dictionary state", d, x.dim()));
        }
        spec.fill_row(x, m.row_mut(r));
    }
    Ok(m)
}

/// Central differences at interior states; the two endpoints are dropped, so
/// entry `k` is the derivative at state `k + 1`.
pub fn estimate_derivatives(traj: &Trajectory) -> Result<Vec<Vector>> {
    if traj.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "central differences need at least 3 states, got {}",
            traj.len()
        )));
    }
    let s = traj.states();
    let inv = 1.0 / (2.0 * traj.h());
    Ok(s.windows(3)
        .map(|w| w[2].iter().zip(w[0].iter()).map(|(a, b)| (a - b) * inv).collect())
        .collect())
}

/// A sparse polynomial vector field `dx/dt = θ(x)ᵀ·xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseModel {
    /// `columns × d`; column `k` holds the coefficients of output `k`.
    pub xi: Matrix,
    pub spec: DictionarySpec,
    pub threshold: f64,
}

impl SparseModel {
    pub fn dim(&self) -> usize {
        self.xi.cols()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let expected = self.spec.n_columns(self.dim());
        if self.xi.rows() != expected {
            return Err(Error::dim("sparse model coefficient rows", expected, self.xi.rows()));
        }
        if !self.xi.is_finite() {
            return Err(Error::NonFinite("sparse model coefficients".into()));
        }
        Ok(())
    }

    /// Number of non-zero coefficients.
    pub fn support_size(&self) -> usize {
        self.xi.as_slice().iter().filter(|v| **v != 0.0).count()
    }

    /// The identified field in constant/linear/quadratic form.
    pub fn to_polynomial(&self) -> Result<PolynomialCoefficients> {
        self.validate()?;
        let d = self.dim();
        let mut p = PolynomialCoefficients::zeros(d);
        for k in 0..d {
            let mut r = 0;
            if self.spec.include_constant {
                p.constant[k] = self.xi[(r, k)];
                r += 1;
            }
            if self.spec.include_linear {
                for j in 0..d {
                    p.linear[(k, j)] = self.xi[(r, k)];
                    r += 1;
                }
            }
            if self.spec.include_quadratic {
                for i in 0..d {
                    for j in i..d {
                        let c = self.xi[(r, k)];
                        if i == j {
                            p.quadratic[k][(i, i)] = c;
                        } else {
                            p.quadratic[k][(i, j)] = 0.5 * c;
                            p.quadratic[k][(j, i)] = 0.5 * c;
                        }
                        r += 1;
                    }
                }
            }
        }
        Ok(p)
    }
}

impl VectorField for SparseModel {
    fn dim(&self) -> usize {
        self.xi.cols()
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        let mut theta = vec![0.0; self.xi.rows()];
        self.spec.fill_row(x, &mut theta);
        dx.fill(0.0);
        for (r, t) in theta.iter().enumerate() {
            if *t == 0.0 {
                continue;
            }
            for (o, c) in dx.iter_mut().zip(self.xi.row(r)) {
                *o += t * c;
            }
        }
    }
}

/// Ridge used inside every thresholded refit.
const STLSQ_RIDGE: f64 = 1e-10;

/// Sequentially thresholded least squares, independently per output column:
/// fit on the current support, drop coefficients below `threshold`, refit,
/// until the support stops changing or `iters` refits were made. Surviving
/// coefficients are at least `threshold` in magnitude.
pub fn stlsq_fit(
    dictionary: &Matrix,
    derivatives: &Matrix,
    spec: DictionarySpec,
    threshold: f64,
    iters: usize,
) -> Result<SparseModel> {
    spec.validate()?;
    if dictionary.rows() != derivatives.rows() {
        return Err(Error::dim("stlsq_fit rows", dictionary.rows(), derivatives.rows()));
    }
    if dictionary.rows() == 0 {
        return Err(Error::EmptyInput("stlsq_fit"));
    }
    let d = derivatives.cols();
    if spec.n_columns(d) != dictionary.cols() {
        return Err(Error::dim("stlsq_fit dictionary columns", spec.n_columns(d), dictionary.cols()));
    }
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    let n_cols = dictionary.cols();
    let mut xi = Matrix::zeros(n_cols, d);
    for k in 0..d {
        let target = derivatives.column(k);
        if target.iter().all(|v| *v == 0.0) {
            continue;
        }
        let target = Matrix::new(target.dim(), 1, target.into_inner())?;
        let mut support: Vec<usize> = (0..n_cols).collect();
        let mut coef = vec![0.0; n_cols];
        for _ in 0..iters.max(1) {
            let fitted = fit_on_support(dictionary, &target, &support)?;
            coef.fill(0.0);
            for (&c, v) in support.iter().zip(&fitted) {
                coef[c] = *v;
            }
            let kept: Vec<usize> = support.iter().copied().filter(|&c| coef[c].abs() >= threshold).collect();
            if kept.is_empty() {
                return Err(Error::EmptySupport { dim: k });
            }
            let stable = kept.len() == support.len();
            support = kept;
            if stable {
                break;
            }
        }
        for c in 0..n_cols {
            xi[(c, k)] = if coef[c].abs() >= threshold { coef[c] } else { 0.0 };
        }
    }
    Ok(SparseModel { xi, spec, threshold })
}

fn fit_on_support(dictionary: &Matrix, target: &Matrix, support: &[usize]) -> Result<Vec<f64>> {
    let mut sub = Matrix::zeros(dictionary.rows(), support.len());
    for r in 0..dictionary.rows() {
        let src = dictionary.row(r);
        for (dst, &c) in sub.row_mut(r).iter_mut().zip(support) {
            *dst = src[c];
        }
    }
    let sol = ridge_least_squares(&sub, target, STLSQ_RIDGE)?;
    Ok(sol.as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparseConfig {
    pub dictionary: DictionarySpec,
    pub threshold: f64,
    pub iterations: usize,
}

impl Default for SparseConfig {
    fn default() -> Self {
        SparseConfig {
            dictionary: DictionarySpec::default(),
            threshold: 0.05,
            iterations: 10,
        }
    }
}

fn rows_to_matrix(rows: &[Vector]) -> Result<Matrix> {
    let d = rows.first().ok_or(Error::EmptyInput("derivative rows"))?.dim();
    let data: Vec<f64> = rows.iter().flat_map(|v| v.iter().copied()).collect();
    Matrix::new(rows.len(), d, data)
}

/// Fits on a trajectory using central-difference derivatives.
pub fn fit_sparse(traj: &Trajectory, config: &SparseConfig) -> Result<SparseModel> {
    let derivs = estimate_derivatives(traj)?;
    let states = &traj.states()[1..traj.len() - 1];
    let theta = build_dictionary(states, &config.dictionary)?;
    stlsq_fit(&theta, &rows_to_matrix(&derivs)?, config.dictionary, config.threshold, config.iterations)
}

/// Fits on states with derivatives taken from a known field, which isolates
/// the regression from derivative-estimation error.
pub fn fit_sparse_exact<F: VectorField>(states: &[Vector], field: &F, config: &SparseConfig) -> Result<SparseModel> {
    let derivs = states.iter().map(|x| field.eval_vector(x)).collect::<Result<Vec<_>>>()?;
    let theta = build_dictionary(states, &config.dictionary)?;
    stlsq_fit(&theta, &rows_to_matrix(&derivs)?, config.dictionary, config.threshold, config.iterations)
}

/// One RK4 step of the identified field.
pub fn sparse_forecast_step(model: &SparseModel, x: &Vector, dt: f64) -> Result<Vector> {
    rk4_step(model, x, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_fixed, OdeSystem, Scheme};

    #[test]
    fn dictionary_examples() {
        let spec = DictionarySpec::default();
        let m = build_dictionary(&[Vector::from([2.0, 3.0])], &spec).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(spec.column_names(2), ["1", "x0", "x1", "x0*x0", "x0*x1", "x1*x1"]);

        let m = build_dictionary(&[Vector::zeros(3)], &spec).unwrap();
        assert_eq!(m.cols(), 10);
        assert_eq!(m[(0, 0)], 1.0);
        assert!(m.row(0)[1..].iter().all(|v| *v == 0.0));

        let lin = DictionarySpec {
            include_constant: false,
            include_linear: true,
            include_quadratic: false,
        };
        assert_eq!(build_dictionary(&[Vector::zeros(3)], &lin).unwrap().cols(), 3);
        let none = DictionarySpec {
            include_linear: false,
            ..lin
        };
        assert!(build_dictionary(&[Vector::zeros(3)], &none).is_err());
        assert!(build_dictionary(&[], &spec).is_err());
    }

    #[test]
    fn derivative_examples() {
        let h = 0.1;
        let v = [1.5, -2.0];
        let lin = Trajectory::new(0.0, h, (0..6).map(|k| v.iter().map(|c| k as f64 * h * c).collect()).collect()).unwrap();
        for d in estimate_derivatives(&lin).unwrap() {
            assert!((d[0] - v[0]).abs() < 1e-12 && (d[1] - v[1]).abs() < 1e-12);
        }
        let flat = Trajectory::new(0.0, h, vec![Vector::from([4.0]); 5]).unwrap();
        assert!(estimate_derivatives(&flat).unwrap().iter().all(|d| d[0] == 0.0));
        let quad = Trajectory::new(0.0, h, (0..7).map(|k| Vector::from([(k as f64 * h).powi(2)])).collect()).unwrap();
        for (i, d) in estimate_derivatives(&quad).unwrap().iter().enumerate() {
            let t = (i + 1) as f64 * h;
            assert!((d[0] - 2.0 * t).abs() < 1e-12);
        }
        let short = Trajectory::new(0.0, h, vec![Vector::from([0.0]); 2]).unwrap();
        assert!(estimate_derivatives(&short).is_err());
    }

    #[test]
    fn stlsq_recovers_linear_growth() {
        let xs: Vec<Vector> = (0..20).map(|i| Vector::from([0.1 * i as f64 - 1.0])).collect();
        let spec = DictionarySpec::default();
        let theta = build_dictionary(&xs, &spec).unwrap();
        let dx = Matrix::new(20, 1, xs.iter().map(|x| 2.0 * x[0]).collect()).unwrap();
        let m = stlsq_fit(&theta, &dx, spec, 0.1, 10).unwrap();
        assert_eq!(m.xi[(0, 0)], 0.0);
        // The 1e-10 ridge shrinks the slope by about 1e-10 / Σx².
        assert!((m.xi[(1, 0)] - 2.0).abs() < 1e-9, "{:?}", m.xi);
        assert_eq!(m.xi[(2, 0)], 0.0);
    }

    #[test]
    fn stlsq_zero_targets_give_zero_model() {
        let xs: Vec<Vector> = (0..10).map(|i| Vector::from([i as f64, 1.0 - i as f64])).collect();
        let spec = DictionarySpec::default();
        let theta = build_dictionary(&xs, &spec).unwrap();
        let m = stlsq_fit(&theta, &Matrix::zeros(10, 2), spec, 0.05, 10).unwrap();
        assert_eq!(m.support_size(), 0);
    }

    #[test]
    fn stlsq_empty_support_names_dimension() {
        let xs: Vec<Vector> = (0..10).map(|i| Vector::from([0.1 * i as f64])).collect();
        let spec = DictionarySpec::default();
        let theta = build_dictionary(&xs, &spec).unwrap();
        let dx = Matrix::new(10, 1, vec![1e-3; 10]).unwrap();
        assert!(matches!(stlsq_fit(&theta, &dx, spec, 0.5, 10), Err(Error::EmptySupport { dim: 0 })));
    }

    #[test]
    fn exact_lorenz63_coefficients() {
        let sys = OdeSystem::lorenz63();
        let tr = integrate_fixed(&sys, &Vector::from([1.0, 1.0, 20.0]), 0.01, 2000, Scheme::Rk4).unwrap();
        let m = fit_sparse_exact(tr.states(), &sys, &SparseConfig::default()).unwrap();
        let truth = [
            // (column, output, value)
            (1, 0, -10.0),
            (2, 0, 10.0),
            (1, 1, 28.0),
            (2, 1, -1.0),
            (6, 1, -1.0),
            (3, 2, -8.0 / 3.0),
            (5, 2, 1.0),
        ];
        let mut expected = Matrix::zeros(10, 3);
        for (c, k, v) in truth {
            expected[(c, k)] = v;
        }
        for c in 0..10 {
            for k in 0..3 {
                assert!((m.xi[(c, k)] - expected[(c, k)]).abs() < 1e-3, "({c},{k})");
                if expected[(c, k)] == 0.0 {
                    assert_eq!(m.xi[(c, k)], 0.0);
                }
            }
        }
        let x = Vector::from([-3.0, 2.0, 25.0]);
        let a = sparse_forecast_step(&m, &x, 0.01).unwrap();
        let b = rk4_step(&sys, &x, 0.01).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn forecast_step_examples() {
        let spec = DictionarySpec::default();
        let zero = SparseModel {
            xi: Matrix::zeros(spec.n_columns(2), 2),
            spec,
            threshold: 0.05,
        };
        let x = Vector::from([0.3, -0.7]);
        assert_eq!(sparse_forecast_step(&zero, &x, 0.1).unwrap(), x);

        let mut xi = Matrix::zeros(3, 1);
        xi[(1, 0)] = -1.0;
        let decay = SparseModel { xi, spec, threshold: 0.05 };
        let y = sparse_forecast_step(&decay, &Vector::from([1.0]), 0.1).unwrap();
        assert!((y[0] - 0.9048375).abs() < 1e-7);
    }

    #[test]
    fn polynomial_conversion_matches_field() {
        let spec = DictionarySpec::default();
        let mut xi = Matrix::zeros(spec.n_columns(3), 3);
        for (i, v) in xi.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let m = SparseModel { xi, spec, threshold: 0.05 };
        let p = m.to_polynomial().unwrap();
        let x = Vector::from([0.4, -1.1, 2.3]);
        let a = m.eval_vector(&x).unwrap();
        let b = p.eval(&x).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }
}
