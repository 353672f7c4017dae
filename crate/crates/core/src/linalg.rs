//! Dense vectors and row-major matrices in `f64`, plus the few factorizations
//! the rest of the crate needs (Cholesky-backed ridge regression, symmetric
//! Jacobi eigenvalues).
//!
//! Problem sizes here are tiny (state dimension at most 40, regression
//! dictionaries of at most a few hundred columns), so everything is plain
//! loops over contiguous slices.

use std::ops::{Deref, DerefMut};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

/// Renders `x` with 17 significant digits, enough for an exact `f64` round trip.
pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn raw_number<E: serde::ser::Error>(x: f64) -> std::result::Result<Box<RawValue>, E> {
    if !x.is_finite() {
        return Err(E::custom(format!("cannot serialize non-finite value {x}")));
    }
    RawValue::from_string(format_sig17(x)).map_err(E::custom)
}

pub(crate) fn serialize_f64_slice<S: Serializer>(
    values: &[f64],
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    let raw = values
        .iter()
        .map(|&x| raw_number::<S::Error>(x))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    serializer.collect_seq(raw)
}

pub(crate) fn serialize_f64<S: Serializer>(
    value: &f64,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    raw_number::<S::Error>(*value)?.serialize(serializer)
}

pub(crate) fn serialize_f64_array4<S: Serializer>(
    values: &[f64; 4],
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    serialize_f64_slice(values, serializer)
}

/// A dense state vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Vector(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::dim("dot", self.dim(), other.dim()));
        }
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for Vector {
    fn from(v: [f64; N]) -> Self {
        Vector(v.to_vec())
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

impl Serialize for Vector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serialize_f64_slice(&self.0, serializer)
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Ok(Vector(Vec::<f64>::deserialize(deserializer)?))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim("Matrix::new", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: n,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.dim() {
            return Err(Error::dim("matvec", self.cols, v.dim()));
        }
        let mut out = Vector::zeros(self.rows);
        self.matvec_into(v, &mut out);
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim("matmul", self.cols, other.rows));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `out = self · x`. Dimensions are the caller's responsibility.
    #[inline]
    pub(crate) fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// `out = self · x + bias`.
    #[inline]
    pub(crate) fn affine_into(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        debug_assert_eq!(bias.len(), self.rows);
        for ((o, row), b) in out
            .iter_mut()
            .zip(self.data.chunks_exact(self.cols))
            .zip(bias)
        {
            *o = dot(row, x) + b;
        }
    }

    /// `out += selfᵀ · g`.
    #[inline]
    pub(crate) fn tr_matvec_acc(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &gi) in self.data.chunks_exact(self.cols).zip(g) {
            if gi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += gi * w;
            }
        }
    }

    /// `self += g · xᵀ`.
    #[inline]
    pub(crate) fn add_outer(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        let cols = self.cols;
        for (row, &gi) in self.data.chunks_exact_mut(cols).zip(g) {
            if gi == 0.0 {
                continue;
            }
            for (w, &xj) in row.iter_mut().zip(x) {
                *w += gi * xj;
            }
        }
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        for row in self.data.chunks_exact(p) {
            for i in 0..p {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                let gi = &mut g.data[i * p..(i + 1) * p];
                for j in i..p {
                    gi[j] += ri * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                g.data[i * p + j] = g.data[j * p + i];
            }
        }
        g
    }

    /// `selfᵀ · other`.
    pub fn tr_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dim("tr_matmul", self.rows, other.rows));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &bj) in out.row_mut(i).iter_mut().zip(b) {
                    *o += a * bj;
                }
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Serialize)]
struct MatrixOut<'a> {
    rows: usize,
    cols: usize,
    data: Vec<NumRow<'a>>,
}

struct NumRow<'a>(&'a [f64]);

impl Serialize for NumRow<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serialize_f64_slice(self.0, serializer)
    }
}

#[derive(Deserialize)]
struct MatrixIn {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let data = if self.cols == 0 {
            vec![NumRow(&[]); self.rows]
        } else {
            self.data.chunks_exact(self.cols).map(NumRow).collect()
        };
        MatrixOut {
            rows: self.rows,
            cols: self.cols,
            data,
        }
        .serialize(serializer)
    }
}

impl Clone for NumRow<'_> {
    fn clone(&self) -> Self {
        NumRow(self.0)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixIn::deserialize(deserializer)?;
        if raw.data.len() != raw.rows {
            return Err(D::Error::custom(format!(
                "matrix declares {} rows but carries {}",
                raw.rows,
                raw.data.len()
            )));
        }
        if raw.data.iter().any(|r| r.len() != raw.cols) {
            return Err(D::Error::custom(format!(
                "matrix row length differs from declared {} columns",
                raw.cols
            )));
        }
        Ok(Matrix {
            rows: raw.rows,
            cols: raw.cols,
            data: raw.data.into_iter().flatten().collect(),
        })
    }
}

/// Solves `(n + diag(ridge)) x = rhs` for symmetric positive (semi)definite `n`.
///
/// The system is symmetrically equilibrated before a Cholesky factorization,
/// so the rank test is relative to the scale of each column.
pub(crate) fn solve_normal_equations(n: &Matrix, rhs: &Matrix, ridge: &[f64]) -> Result<Matrix> {
    let p = n.rows();
    if n.cols() != p {
        return Err(Error::dim("normal equations (square)", p, n.cols()));
    }
    if rhs.rows() != p {
        return Err(Error::dim("normal equations (rhs rows)", p, rhs.rows()));
    }
    if ridge.len() != p {
        return Err(Error::dim("normal equations (ridge)", p, ridge.len()));
    }
    let scale: Vec<f64> = (0..p)
        .map(|i| {
            let d = n[(i, i)] + ridge[i];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut l = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let mut v = n[(i, j)] * scale[i] * scale[j];
            if i == j {
                v += ridge[i] * scale[i] * scale[i];
            }
            l[(i, j)] = v;
        }
    }
    const PIVOT_TOL: f64 = 1e-12;
    for j in 0..p {
        let mut d = l[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_TOL) {
            return Err(Error::RankDeficient(format!(
                "column {j} of a {p}-column design is linearly dependent on the preceding columns \
                 (relative pivot {d:.3e})"
            )));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..p {
            let mut v = l[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    let q = rhs.cols();
    let mut x = Matrix::zeros(p, q);
    let mut y = vec![0.0; p];
    for c in 0..q {
        for i in 0..p {
            let mut v = rhs[(i, c)] * scale[i];
            for k in 0..i {
                v -= l[(i, k)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        for i in (0..p).rev() {
            let mut v = y[i];
            for k in i + 1..p {
                v -= l[(k, i)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        for i in 0..p {
            x[(i, c)] = y[i] * scale[i];
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("normal-equation solve".into()));
    }
    Ok(x)
}

/// Minimizes `‖a·x − b‖² + lambda·‖x‖²` through the normal equations.
pub fn ridge_least_squares(a: &Matrix, b: &Matrix, lambda: f64) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::dim("ridge_least_squares rows", a.rows(), b.rows()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let n = a.gram();
    let rhs = a.tr_matmul(b)?;
    solve_normal_equations(&n, &rhs, &vec![lambda; a.cols()])
}

/// Per-dimension mean and population standard deviation. Zero spreads are
/// replaced by one so the result can always be divided by.
pub fn standardize_stats(data: &[Vector]) -> Result<(Vector, Vector)> {
    let first = data.first().ok_or(Error::EmptyInput("standardize_stats"))?;
    let d = first.dim();
    let n = data.len() as f64;
    let mut mean = Vector::zeros(d);
    for v in data {
        if v.dim() != d {
            return Err(Error::dim("standardize_stats", d, v.dim()));
        }
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = Vector::zeros(d);
    for v in data {
        for ((s, x), m) in var.iter_mut().zip(v.iter()).zip(mean.iter()) {
            *s += (x - m) * (x - m);
        }
    }
    let std = var
        .iter()
        .zip(mean.iter())
        .map(|(s, m)| {
            let sd = (s / n).sqrt();
            if sd > 1e-14 * m.abs() && sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok((mean, std))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::dim("symmetric_eigenvalues", n, m.cols()));
    }
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Smallest singular value of a tall (or square) matrix.
pub fn smallest_singular_value(m: &Matrix) -> Result<f64> {
    let eig = symmetric_eigenvalues(&m.gram())?;
    Ok(eig.first().copied().unwrap_or(0.0).max(0.0).sqrt())
}
