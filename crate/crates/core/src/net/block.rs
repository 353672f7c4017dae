//! The bilinear block
//!
//! ```text
//! F(x) = W_out · [ W_lin·x + b_lin ; (W_left·x + b_left) ⊙ (W_right·x + b_right) ] + b_out
//! ```
//!
//! i.e. a linear branch concatenated with the elementwise product of two
//! linear branches, mixed by an output layer. The result is a quadratic
//! polynomial in `x`, which is what most physical vector fields look like.

use serde::{Deserialize, Serialize};

use super::params::{Block, ParamSet};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub w_linear: Matrix,
    pub b_linear: Vector,
    pub w_left: Matrix,
    pub b_left: Vector,
    pub w_right: Matrix,
    pub b_right: Vector,
    pub w_out: Matrix,
    pub b_out: Vector,
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    let bound = glorot_bound(cols, rows);
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Matrix::new(rows, cols, data).expect("sizes agree")
}

impl BlockParams {
    pub fn zeros(d: usize, p_lin: usize, p_bil: usize) -> Self {
        BlockParams {
            w_linear: Matrix::zeros(p_lin, d),
            b_linear: Vector::zeros(p_lin),
            w_left: Matrix::zeros(p_bil, d),
            b_left: Vector::zeros(p_bil),
            w_right: Matrix::zeros(p_bil, d),
            b_right: Vector::zeros(p_bil),
            w_out: Matrix::zeros(d, p_lin + p_bil),
            b_out: Vector::zeros(d),
        }
    }

    /// Glorot-uniform weights per layer, zero biases.
    pub fn init(d: usize, p_lin: usize, p_bil: usize, rng: &mut SeededRng) -> Result<Self> {
        if d == 0 || p_lin == 0 || p_bil == 0 {
            return Err(Error::InvalidArgument(format!(
                "block sizes must be positive (d {d}, p_lin {p_lin}, p_bil {p_bil})"
            )));
        }
        let mut b = BlockParams::zeros(d, p_lin, p_bil);
        b.w_linear = glorot_matrix(p_lin, d, rng);
        b.w_left = glorot_matrix(p_bil, d, rng);
        b.w_right = glorot_matrix(p_bil, d, rng);
        b.w_out = glorot_matrix(d, p_lin + p_bil, rng);
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.w_linear.cols()
    }

    pub fn p_lin(&self) -> usize {
        self.w_linear.rows()
    }

    pub fn p_bil(&self) -> usize {
        self.w_left.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, pl, pb) = (self.dim(), self.p_lin(), self.p_bil());
        let checks = [
            ("block b_linear", pl, self.b_linear.dim()),
            ("block w_left columns", d, self.w_left.cols()),
            ("block w_right rows", pb, self.w_right.rows()),
            ("block w_right columns", d, self.w_right.cols()),
            ("block b_left", pb, self.b_left.dim()),
            ("block b_right", pb, self.b_right.dim()),
            ("block w_out rows", d, self.w_out.rows()),
            ("block w_out columns", pl + pb, self.w_out.cols()),
            ("block b_out", d, self.b_out.dim()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::dim(what, expected, got));
            }
        }
        if d == 0 || pl == 0 || pb == 0 {
            return Err(Error::InvariantViolation("block with an empty layer".into()));
        }
        if !self.all_finite() {
            return Err(Error::NonFinite("block parameters".into()));
        }
        Ok(())
    }

    /// Evaluates `F(x)`.
    pub fn block_forward(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.dim() {
            return Err(Error::dim("block_forward", self.dim(), x.dim()));
        }
        let mut cache = self.new_cache();
        let mut out = Vector::zeros(self.dim());
        self.forward(x, &mut cache, &mut out);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    x: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    hidden: Vec<f64>,
    d_hidden: Vec<f64>,
    d_lin: Vec<f64>,
    d_left: Vec<f64>,
    d_right: Vec<f64>,
}

impl ParamSet for BlockParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w_linear.as_slice(),
            &self.b_linear,
            self.w_left.as_slice(),
            &self.b_left,
            self.w_right.as_slice(),
            &self.b_right,
            self.w_out.as_slice(),
            &self.b_out,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_linear.as_mut_slice(),
            &mut self.b_linear,
            self.w_left.as_mut_slice(),
            &mut self.b_left,
            self.w_right.as_mut_slice(),
            &mut self.b_right,
            self.w_out.as_mut_slice(),
            &mut self.b_out,
        ]
    }
}

impl Block for BlockParams {
    type Cache = BlockCache;

    fn dim(&self) -> usize {
        self.w_linear.cols()
    }

    fn new_cache(&self) -> BlockCache {
        let (d, pl, pb) = (self.dim(), self.p_lin(), self.p_bil());
        BlockCache {
            x: vec![0.0; d],
            left: vec![0.0; pb],
            right: vec![0.0; pb],
            hidden: vec![0.0; pl + pb],
            d_hidden: vec![0.0; pl + pb],
            d_lin: vec![0.0; pl],
            d_left: vec![0.0; pb],
            d_right: vec![0.0; pb],
        }
    }

    fn forward(&self, x: &[f64], c: &mut BlockCache, out: &mut [f64]) {
        let pl = self.p_lin();
        c.x.copy_from_slice(x);
        let (lin, prod) = c.hidden.split_at_mut(pl);
        self.w_linear.affine_into(x, &self.b_linear, lin);
        self.w_left.affine_into(x, &self.b_left, &mut c.left);
        self.w_right.affine_into(x, &self.b_right, &mut c.right);
        for ((p, l), r) in prod.iter_mut().zip(&c.left).zip(&c.right) {
            *p = l * r;
        }
        self.w_out.affine_into(&c.hidden, &self.b_out, out);
    }

    fn backward(&self, c: &mut BlockCache, g: &[f64], grad: &mut Self, dx: &mut [f64]) {
        let pl = self.p_lin();
        grad.w_out.add_outer(g, &c.hidden);
        for (b, gi) in grad.b_out.iter_mut().zip(g) {
            *b += gi;
        }
        c.d_hidden.fill(0.0);
        self.w_out.tr_matvec_acc(g, &mut c.d_hidden);
        let (dh_lin, dh_prod) = c.d_hidden.split_at(pl);
        c.d_lin.copy_from_slice(dh_lin);
        for m in 0..self.p_bil() {
            c.d_left[m] = dh_prod[m] * c.right[m];
            c.d_right[m] = dh_prod[m] * c.left[m];
        }
        grad.w_linear.add_outer(&c.d_lin, &c.x);
        grad.w_left.add_outer(&c.d_left, &c.x);
        grad.w_right.add_outer(&c.d_right, &c.x);
        for (b, v) in grad.b_linear.iter_mut().zip(&c.d_lin) {
            *b += v;
        }
        for (b, v) in grad.b_left.iter_mut().zip(&c.d_left) {
            *b += v;
        }
        for (b, v) in grad.b_right.iter_mut().zip(&c.d_right) {
            *b += v;
        }
        dx.fill(0.0);
        self.w_linear.tr_matvec_acc(&c.d_lin, dx);
        self.w_left.tr_matvec_acc(&c.d_left, dx);
        self.w_right.tr_matvec_acc(&c.d_right, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// d = 1, one linear and one bilinear unit: F(x) = 2x + x².
    pub(crate) fn scalar_block() -> BlockParams {
        let mut b = BlockParams::zeros(1, 1, 1);
        b.w_linear[(0, 0)] = 2.0;
        b.w_left[(0, 0)] = 1.0;
        b.w_right[(0, 0)] = 1.0;
        b.w_out[(0, 0)] = 1.0;
        b.w_out[(0, 1)] = 1.0;
        b
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = BlockParams::init(3, 4, 5, &mut SeededRng::new(1)).unwrap();
        let b = BlockParams::init(3, 4, 5, &mut SeededRng::new(1)).unwrap();
        assert_eq!(a, b);
        let bounds = [
            (&a.w_linear, glorot_bound(3, 4)),
            (&a.w_left, glorot_bound(3, 5)),
            (&a.w_right, glorot_bound(3, 5)),
            (&a.w_out, glorot_bound(9, 3)),
        ];
        for (m, bound) in bounds {
            assert!(m.as_slice().iter().all(|w| w.abs() <= bound));
        }
        assert!(a.b_linear.iter().chain(a.b_out.iter()).all(|&v| v == 0.0));
        assert!(BlockParams::init(0, 1, 1, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn init_weight_mean_is_centered() {
        let mut rng = SeededRng::new(77);
        let mut sum = 0.0;
        let mut n = 0usize;
        while n < 10_000 {
            let b = BlockParams::init(3, 3, 3, &mut rng).unwrap();
            for t in [&b.w_linear, &b.w_left, &b.w_right, &b.w_out] {
                sum += t.as_slice().iter().sum::<f64>();
                n += t.as_slice().len();
            }
        }
        assert!((sum / n as f64).abs() < 0.01);
    }

    #[test]
    fn forward_examples() {
        let mut b = BlockParams::zeros(3, 3, 3);
        b.b_out = Vector::from([1.0, -2.0, 0.5]);
        for x in [[0.0, 0.0, 0.0], [3.0, -1.0, 7.0]] {
            assert_eq!(b.block_forward(&Vector::from(x)).unwrap(), b.b_out);
        }

        let mut b = BlockParams::init(2, 2, 2, &mut SeededRng::new(3)).unwrap();
        b.w_left = Matrix::zeros(2, 2);
        b.b_left = Vector::zeros(2);
        let f = |x: [f64; 2]| b.block_forward(&Vector::from(x)).unwrap();
        let (fa, fb, fab) = (f([1.0, 2.0]), f([-3.0, 0.5]), f([-2.0, 2.5]));
        let f0 = f([0.0, 0.0]);
        for j in 0..2 {
            assert!((fab[j] - (fa[j] + fb[j] - f0[j])).abs() < 1e-12);
        }

        let s = scalar_block();
        assert_eq!(s.block_forward(&Vector::from([3.0])).unwrap()[0], 15.0);
        assert!(s.block_forward(&Vector::zeros(2)).is_err());
    }

    #[test]
    fn validate_catches_bad_shapes() {
        let mut b = BlockParams::zeros(3, 2, 2);
        assert!(b.validate().is_ok());
        b.w_out = Matrix::zeros(3, 3);
        assert!(matches!(b.validate(), Err(Error::DimensionMismatch { .. })));
    }
}
