//! Analog forecasting: find the nearest training inputs to the query, weight
//! them with a Gaussian kernel, fit a locally affine map from inputs to
//! successors, and evaluate it at the query.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_normal_equations, Matrix, Vector};
use crate::training::PairDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median of the neighbor distances.
    MedianDistance,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalogConfig {
    pub k: usize,
    pub bandwidth: Bandwidth,
    /// Penalty on the slope terms of the local affine fit; the intercept is
    /// never penalized.
    pub ridge: f64,
}

impl Default for AnalogConfig {
    fn default() -> Self {
        AnalogConfig {
            k: 50,
            bandwidth: Bandwidth::MedianDistance,
            ridge: 1e-6,
        }
    }
}

const BANDWIDTH_FLOOR: f64 = 1e-12;

impl AnalogConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("analog k must be at least 1".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::InvalidArgument(format!("analog ridge must be non-negative, got {}", self.ridge)));
        }
        if self.ridge == 0.0 && self.k < d + 1 {
            return Err(Error::InvalidArgument(format!(
                "an unregularized affine fit in {d} dimensions needs k >= {}, got {}",
                d + 1,
                self.k
            )));
        }
        if let Bandwidth::Fixed(s) = self.bandwidth {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!("fixed bandwidth must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Indices of the `k` nearest inputs with their distances, nearest first.
/// Equal distances go to the lower index.
fn nearest(train: &PairDataset, x: &[f64], k: usize) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = train
        .inputs()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    all.into_iter().map(|(d2, i)| (d2.sqrt(), i)).collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// One analog forecast of the successor of `x`.
pub fn analog_forecast_step(train: &PairDataset, x: &Vector, config: &AnalogConfig) -> Result<Vector> {
    let d = train.input_dim();
    if x.dim() != d {
        return Err(Error::dim("analog query", d, x.dim()));
    }
    config.validate(d)?;
    if config.k > train.len() {
        return Err(Error::InvalidArgument(format!(
            "analog k = {} exceeds the {} training pairs",
            config.k,
            train.len()
        )));
    }
    let nn = nearest(train, x, config.k);
    let dists: Vec<f64> = nn.iter().map(|p| p.0).collect();
    let sigma = match config.bandwidth {
        Bandwidth::MedianDistance => median(&dists),
        Bandwidth::Fixed(s) => s,
    }
    .max(BANDWIDTH_FLOOR);
    let mut w: Vec<f64> = dists.iter().map(|r| (-(r / sigma) * (r / sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NonFinite("analog kernel weights".into()));
    }
    w.iter_mut().for_each(|v| *v /= total);

    // Weighted normal equations of the centered design [1, x_j - x].
    let p = d + 1;
    let d_out = train.output_dim();
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = Matrix::zeros(p, d_out);
    let mut row = vec![0.0; p];
    for (&(_, i), &wi) in nn.iter().zip(&w) {
        row[0] = 1.0;
        for (r, (a, b)) in row[1..].iter_mut().zip(train.inputs()[i].iter().zip(x.iter())) {
            *r = a - b;
        }
        for a in 0..p {
            for b in 0..p {
                gram[(a, b)] += wi * row[a] * row[b];
            }
            for (c, t) in train.targets()[i].iter().enumerate() {
                rhs[(a, c)] += wi * row[a] * t;
            }
        }
    }
    let mut ridge = vec![config.ridge; p];
    ridge[0] = 0.0;
    let beta = solve_normal_equations(&gram, &rhs, &ridge)?;
    Ok(beta.row(0).iter().copied().collect())
}

/// An analog model bound to its training set.
#[derive(Debug, Clone)]
pub struct AnalogForecaster {
    pub train: PairDataset,
    pub config: AnalogConfig,
}

impl AnalogForecaster {
    pub fn new(train: PairDataset, config: AnalogConfig) -> Result<Self> {
        config.validate(train.input_dim())?;
        if config.k > train.len() {
            return Err(Error::InvalidArgument(format!(
                "analog k = {} exceeds the {} training pairs",
                config.k,
                train.len()
            )));
        }
        Ok(AnalogForecaster { train, config })
    }

    pub fn step(&self, x: &Vector) -> Result<Vector> {
        analog_forecast_step(&self.train, x, &self.config)
    }
}
