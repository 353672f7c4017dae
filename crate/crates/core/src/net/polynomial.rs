//! Exact expansion of a bilinear block into a quadratic polynomial
//! `f_k(x) = c_k + L_k·x + xᵀ Q_k x`, so a trained network can be read as an
//! explicit ODE right-hand side.

use serde::{Deserialize, Serialize};

use super::block::BlockParams;
use super::residual::Normalization;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialCoefficients {
    pub constant: Vector,
    pub linear: Matrix,
    /// One symmetric `d × d` matrix per output component.
    pub quadratic: Vec<Matrix>,
}

/// Number of monomials `x_i·x_j` with `i ≤ j`.
pub fn quadratic_terms(d: usize) -> usize {
    d * (d + 1) / 2
}

impl PolynomialCoefficients {
    pub fn zeros(d: usize) -> Self {
        PolynomialCoefficients {
            constant: Vector::zeros(d),
            linear: Matrix::zeros(d, d),
            quadratic: vec![Matrix::zeros(d, d); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.dim()
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        let d = self.dim();
        if x.dim() != d {
            return Err(Error::dim("polynomial eval", d, x.dim()));
        }
        let mut out = self.constant.clone();
        for k in 0..d {
            out[k] += crate::linalg::dot(self.linear.row(k), x);
            let q = &self.quadratic[k];
            let mut acc = 0.0;
            for i in 0..d {
                acc += x[i] * crate::linalg::dot(q.row(i), x);
            }
            out[k] += acc;
        }
        Ok(out)
    }

    /// Coefficients in the monomial basis, output by output:
    /// `[c_k, L_k0 .. L_k(d-1), q_k(0,0), q_k(0,1), .., q_k(d-1,d-1)]` where the
    /// quadratic monomials run over `i ≤ j` in row-major order. Off-diagonal
    /// monomial coefficients are `2·Q_k[i][j]`.
    pub fn monomial_coefficients(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * (1 + d + quadratic_terms(d)));
        for k in 0..d {
            out.push(self.constant[k]);
            out.extend_from_slice(self.linear.row(k));
            let q = &self.quadratic[k];
            for i in 0..d {
                out.push(q[(i, i)]);
                for j in i + 1..d {
                    out.push(2.0 * q[(i, j)]);
                }
            }
        }
        out
    }

    /// Inverse of [`PolynomialCoefficients::monomial_coefficients`].
    pub fn from_monomial_coefficients(d: usize, coeffs: &[f64]) -> Result<Self> {
        let per_output = 1 + d + quadratic_terms(d);
        if coeffs.len() != d * per_output {
            return Err(Error::dim("monomial coefficients", d * per_output, coeffs.len()));
        }
        let mut p = PolynomialCoefficients::zeros(d);
        for (k, chunk) in coeffs.chunks_exact(per_output).enumerate() {
            p.constant[k] = chunk[0];
            p.linear.row_mut(k).copy_from_slice(&chunk[1..=d]);
            let mut idx = 1 + d;
            let q = &mut p.quadratic[k];
            for i in 0..d {
                q[(i, i)] = chunk[idx];
                idx += 1;
                for j in i + 1..d {
                    q[(i, j)] = 0.5 * chunk[idx];
                    q[(j, i)] = 0.5 * chunk[idx];
                    idx += 1;
                }
            }
        }
        Ok(p)
    }

    /// Rewrites `g(x) = s ⊙ f((x - m)/s)` as a polynomial in raw coordinates.
    fn denormalize(&self, norm: &Normalization) -> Result<Self> {
        let d = self.dim();
        if norm.dim() != d {
            return Err(Error::dim("polynomial normalization", d, norm.dim()));
        }
        // z = P·x + r with P = diag(1/s), r = -m/s.
        let p: Vec<f64> = norm.std.iter().map(|s| 1.0 / s).collect();
        let r: Vec<f64> = norm.mean.iter().zip(norm.std.iter()).map(|(m, s)| -m / s).collect();
        let mut out = PolynomialCoefficients::zeros(d);
        for k in 0..d {
            let q = &self.quadratic[k];
            let qr: Vec<f64> = (0..d).map(|i| crate::linalg::dot(q.row(i), &r)).collect();
            let mut c = self.constant[k] + crate::linalg::dot(self.linear.row(k), &r);
            c += crate::linalg::dot(&r, &qr);
            let scale = norm.std[k];
            out.constant[k] = scale * c;
            for j in 0..d {
                out.linear[(k, j)] = scale * (self.linear[(k, j)] + 2.0 * qr[j]) * p[j];
                for i in 0..d {
                    out.quadratic[k][(i, j)] = scale * p[i] * q[(i, j)] * p[j];
                }
            }
        }
        Ok(out)
    }
}

/// Expands a bilinear block into constant, linear and symmetric quadratic
/// parts. With `norm`, the result is the raw-coordinate field
/// `x ↦ std ⊙ F((x - mean)/std)`.
pub fn expand_to_polynomial(
    block: &BlockParams,
    norm: Option<&Normalization>,
) -> Result<PolynomialCoefficients> {
    block.validate()?;
    let d = block.dim();
    let pl = block.p_lin();
    let pb = block.p_bil();
    let mut poly = PolynomialCoefficients::zeros(d);
    for k in 0..d {
        let w_out = block.w_out.row(k);
        let (out_lin, out_bil) = w_out.split_at(pl);
        let mut c = block.b_out[k];
        for m in 0..pl {
            c += out_lin[m] * block.b_linear[m];
        }
        for m in 0..pb {
            c += out_bil[m] * block.b_left[m] * block.b_right[m];
        }
        poly.constant[k] = c;
        for j in 0..d {
            let mut l = 0.0;
            for m in 0..pl {
                l += out_lin[m] * block.w_linear[(m, j)];
            }
            for m in 0..pb {
                l += out_bil[m]
                    * (block.b_right[m] * block.w_left[(m, j)] + block.b_left[m] * block.w_right[(m, j)]);
            }
            poly.linear[(k, j)] = l;
        }
        let q = &mut poly.quadratic[k];
        for m in 0..pb {
            let w = out_bil[m];
            if w == 0.0 {
                continue;
            }
            let (left, right) = (block.w_left.row(m), block.w_right.row(m));
            for i in 0..d {
                for j in 0..d {
                    q[(i, j)] += 0.5 * w * (left[i] * right[j] + left[j] * right[i]);
                }
            }
        }
    }
    match norm {
        Some(n) => poly.denormalize(n),
        None => Ok(poly),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_point(rng: &mut SeededRng, d: usize, scale: f64) -> Vector {
        (0..d).map(|_| scale * rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn zero_block_expands_to_bias() {
        let mut b = BlockParams::zeros(3, 2, 2);
        let p = expand_to_polynomial(&b, None).unwrap();
        assert_eq!(p, PolynomialCoefficients::zeros(3));
        b.b_out = Vector::from([1.0, 2.0, 3.0]);
        let p = expand_to_polynomial(&b, None).unwrap();
        assert_eq!(p.constant, b.b_out);
        assert!(p.linear.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_block_expansion() {
        let mut b = BlockParams::zeros(1, 1, 1);
        b.w_linear[(0, 0)] = 2.0;
        b.w_left[(0, 0)] = 1.0;
        b.w_right[(0, 0)] = 1.0;
        b.w_out[(0, 0)] = 1.0;
        b.w_out[(0, 1)] = 1.0;
        let p = expand_to_polynomial(&b, None).unwrap();
        assert_eq!(p.constant[0], 0.0);
        assert_eq!(p.linear[(0, 0)], 2.0);
        assert_eq!(p.quadratic[0][(0, 0)], 1.0);
    }

    #[test]
    fn expansion_reproduces_block() {
        let mut rng = SeededRng::new(21);
        for &(d, pl, pb) in &[(3, 3, 3), (4, 2, 5), (1, 1, 1)] {
            let mut b = BlockParams::init(d, pl, pb, &mut rng).unwrap();
            for t in [&mut b.b_linear, &mut b.b_left, &mut b.b_right, &mut b.b_out] {
                for v in t.iter_mut() {
                    *v = rng.uniform(-1.0, 1.0);
                }
            }
            let p = expand_to_polynomial(&b, None).unwrap();
            for q in &p.quadratic {
                assert!(q.max_asymmetry() < 1e-12);
            }
            for _ in 0..100 {
                let x = random_point(&mut rng, d, 2.0);
                let f = b.block_forward(&x).unwrap();
                let g = p.eval(&x).unwrap();
                for (a, e) in f.iter().zip(g.iter()) {
                    assert!((a - e).abs() < 1e-10, "{a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn denormalized_expansion_matches_raw_field() {
        let mut rng = SeededRng::new(8);
        let b = BlockParams::init(3, 3, 3, &mut rng).unwrap();
        let norm = Normalization::new(Vector::from([1.0, -5.0, 20.0]), Vector::from([2.0, 0.5, 8.0]))
            .unwrap();
        let p = expand_to_polynomial(&b, Some(&norm)).unwrap();
        for _ in 0..50 {
            let x = random_point(&mut rng, 3, 10.0);
            let z: Vector = (0..3).map(|i| (x[i] - norm.mean[i]) / norm.std[i]).collect();
            let fz = b.block_forward(&z).unwrap();
            let g = p.eval(&x).unwrap();
            for i in 0..3 {
                assert!((norm.std[i] * fz[i] - g[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn monomial_round_trip() {
        let mut rng = SeededRng::new(2);
        let coeffs: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
        let p = PolynomialCoefficients::from_monomial_coefficients(3, &coeffs).unwrap();
        assert_eq!(p.monomial_coefficients(), coeffs);
        assert!(PolynomialCoefficients::from_monomial_coefficients(3, &coeffs[1..]).is_err());
    }

    trait Asym {
        fn max_asymmetry(&self) -> f64;
    }

    impl Asym for Matrix {
        fn max_asymmetry(&self) -> f64 {
            let n = self.rows();
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| (self[(i, j)] - self[(j, i)]).abs())
                .fold(0.0, f64::max)
        }
    }
}
