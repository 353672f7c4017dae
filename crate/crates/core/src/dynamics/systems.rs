//! The three reference ODE systems.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// A right-hand side `dx/dt = f(x)`.
///
/// `eval` writes into `dx`; callers guarantee both slices have length `dim()`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], dx: &mut [f64]);

    /// Allocating, dimension-checked evaluation.
    fn eval_vector(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.dim() {
            return Err(Error::dim("vector field input", self.dim(), x.dim()));
        }
        let mut dx = Vector::zeros(self.dim());
        self.eval(x, &mut dx);
        Ok(dx)
    }
}

/// Wraps a closure as a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        (self.f)(x, dx)
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        (**self).eval(x, dx)
    }
}

pub const LORENZ96_DIM: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Lorenz63,
    Oregonator,
    Lorenz96,
}

impl SystemKind {
    pub const ALL: [SystemKind; 3] = [
        SystemKind::Lorenz63,
        SystemKind::Oregonator,
        SystemKind::Lorenz96,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Lorenz63 => "lorenz63",
            SystemKind::Oregonator => "oregonator",
            SystemKind::Lorenz96 => "lorenz96",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown system '{s}'; valid names: lorenz63, oregonator, lorenz96"
                ))
            })
    }
}

/// A reference ODE together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum OdeSystem {
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Oregonator { alpha: f64, beta: f64, sigma: f64 },
    Lorenz96 { forcing: f64 },
}

impl OdeSystem {
    /// Chaotic regime σ = 10, ρ = 28, β = 8/3.
    pub fn lorenz63() -> Self {
        OdeSystem::Lorenz63 {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }

    /// α = 77.27, β = 8.375e-6, σ = 0.161.
    pub fn oregonator() -> Self {
        OdeSystem::Oregonator {
            alpha: 77.27,
            beta: 8.375e-6,
            sigma: 0.161,
        }
    }

    /// 40 variables with forcing 9.
    pub fn lorenz96() -> Self {
        OdeSystem::Lorenz96 { forcing: 9.0 }
    }

    pub fn from_kind(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Lorenz63 => Self::lorenz63(),
            SystemKind::Oregonator => Self::oregonator(),
            SystemKind::Lorenz96 => Self::lorenz96(),
        }
    }

    pub fn kind(&self) -> SystemKind {
        match self {
            OdeSystem::Lorenz63 { .. } => SystemKind::Lorenz63,
            OdeSystem::Oregonator { .. } => SystemKind::Oregonator,
            OdeSystem::Lorenz96 { .. } => SystemKind::Lorenz96,
        }
    }

    /// Sampling step of the generated time series.
    pub fn default_step(&self) -> f64 {
        match self {
            OdeSystem::Lorenz63 { .. } => 0.01,
            OdeSystem::Oregonator { .. } => 0.1,
            OdeSystem::Lorenz96 { .. } => 0.05,
        }
    }

    /// Starting point of data generation, before spinup.
    pub fn default_initial_condition(&self) -> Vector {
        match *self {
            OdeSystem::Lorenz63 { .. } => Vector::from([1.0, 1.0, 1.0]),
            OdeSystem::Oregonator { .. } => Vector::from([1.0, 2.0, 3.0]),
            OdeSystem::Lorenz96 { forcing } => {
                let mut x = Vector::filled(LORENZ96_DIM, forcing);
                x[LORENZ96_DIM / 2] += 0.01;
                x
            }
        }
    }
}

impl VectorField for OdeSystem {
    fn dim(&self) -> usize {
        match self {
            OdeSystem::Lorenz96 { .. } => LORENZ96_DIM,
            _ => 3,
        }
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        match *self {
            OdeSystem::Lorenz63 { sigma, rho, beta } => lorenz63_into(x, sigma, rho, beta, dx),
            OdeSystem::Oregonator { alpha, beta, sigma } => {
                oregonator_into(x, alpha, beta, sigma, dx)
            }
            OdeSystem::Lorenz96 { forcing } => lorenz96_into(x, forcing, dx),
        }
    }
}

#[inline]
fn lorenz63_into(x: &[f64], sigma: f64, rho: f64, beta: f64, dx: &mut [f64]) {
    dx[0] = sigma * (x[1] - x[0]);
    dx[1] = rho * x[0] - x[1] - x[0] * x[2];
    dx[2] = x[0] * x[1] - beta * x[2];
}

#[inline]
fn oregonator_into(x: &[f64], alpha: f64, beta: f64, sigma: f64, dx: &mut [f64]) {
    dx[0] = alpha * (x[1] + x[0] * (1.0 - beta * x[0] - x[1]));
    dx[1] = (x[2] - (1.0 + x[0]) * x[1]) / alpha;
    dx[2] = sigma * (x[0] - x[2]);
}

#[inline]
fn lorenz96_into(x: &[f64], forcing: f64, dx: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let next = x[(i + 1) % n];
        let prev = x[(i + n - 1) % n];
        let prev2 = x[(i + n - 2) % n];
        dx[i] = (next - prev2) * prev - x[i] + forcing;
    }
}

fn check_dim(x: &Vector, expected: usize, context: &'static str) -> Result<()> {
    if x.dim() != expected {
        return Err(Error::dim(context, expected, x.dim()));
    }
    Ok(())
}

pub fn lorenz63_field(x: &Vector, sigma: f64, rho: f64, beta: f64) -> Result<Vector> {
    check_dim(x, 3, "lorenz63_field")?;
    let mut dx = Vector::zeros(3);
    lorenz63_into(x, sigma, rho, beta, &mut dx);
    Ok(dx)
}

pub fn oregonator_field(x: &Vector, alpha: f64, beta: f64, sigma: f64) -> Result<Vector> {
    check_dim(x, 3, "oregonator_field")?;
    let mut dx = Vector::zeros(3);
    oregonator_into(x, alpha, beta, sigma, &mut dx);
    Ok(dx)
}

/// Damped Lorenz-96 with periodic indices over 40 variables.
pub fn lorenz96_field(x: &Vector, forcing: f64) -> Result<Vector> {
    check_dim(x, LORENZ96_DIM, "lorenz96_field")?;
    let mut dx = Vector::zeros(LORENZ96_DIM);
    lorenz96_into(x, forcing, &mut dx);
    Ok(dx)
}
