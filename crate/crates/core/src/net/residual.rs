//! Runge-Kutta shaped residual network with one shared block.
//!
//! With `n_blocks = 4` the forward pass is exactly a classic RK4 step with the
//! block as the vector field:
//!
//! ```text
//! k1 = F(z), k_i = F(z + beta_i·dt·k_{i-1}),  z' = z + dt·Σ alpha_i·k_i
//! ```
//!
//! and with `n_blocks = 1` it is an explicit Euler step. All stages evaluate
//! the same parameters, so sharing holds by construction and stage gradients
//! accumulate into a single buffer.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::block::BlockParams;
use super::params::{Block, ParamSet, Trainable};
use crate::dynamics::{VectorField, RK4_ALPHA, RK4_BETA};
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkCoefficients {
    #[serde(serialize_with = "linalg::serialize_f64_array4")]
    pub alpha: [f64; 4],
    #[serde(serialize_with = "linalg::serialize_f64_array4")]
    pub beta: [f64; 4],
    pub trainable: bool,
}

impl Default for RkCoefficients {
    fn default() -> Self {
        RkCoefficients {
            alpha: RK4_ALPHA,
            beta: RK4_BETA,
            trainable: false,
        }
    }
}

impl RkCoefficients {
    pub fn trainable() -> Self {
        RkCoefficients {
            trainable: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.trainable && (self.alpha != RK4_ALPHA || self.beta != RK4_BETA) {
            return Err(Error::InvariantViolation(
                "fixed Runge-Kutta coefficients must equal the classic RK4 tableau".into(),
            ));
        }
        if self.alpha.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Runge-Kutta coefficients".into()));
        }
        Ok(())
    }
}

/// Per-dimension standardization `z = (x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vector,
    pub std: Vector,
}

impl Normalization {
    pub fn new(mean: Vector, std: Vector) -> Result<Self> {
        let n = Normalization { mean, std };
        n.validate()?;
        Ok(n)
    }

    pub fn from_data(data: &[Vector]) -> Result<Self> {
        let (mean, std) = linalg::standardize_stats(data)?;
        Normalization::new(mean, std)
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.dim() != self.std.dim() {
            return Err(Error::dim("normalization", self.mean.dim(), self.std.dim()));
        }
        if !self.mean.is_finite() || self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvariantViolation(
                "normalization std entries must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn to_standard(&self, x: &[f64], z: &mut [f64]) {
        for (((zi, xi), m), s) in z.iter_mut().zip(x).zip(self.mean.iter()).zip(self.std.iter()) {
            *zi = (xi - m) / s;
        }
    }

    #[inline]
    pub(crate) fn from_standard(&self, z: &[f64], x: &mut [f64]) {
        for (((xi, zi), m), s) in x.iter_mut().zip(z).zip(self.mean.iter()).zip(self.std.iter()) {
            *xi = m + s * zi;
        }
    }
}

/// Buffers for one pass through the Runge-Kutta combination of stages.
pub struct RkTape<C> {
    stage_in: [Vec<f64>; 4],
    k: [Vec<f64>; 4],
    caches: Vec<C>,
    inc: Vec<f64>,
    gk: [Vec<f64>; 4],
    ds: Vec<f64>,
}

impl<C> RkTape<C> {
    pub(crate) fn new<B: Block<Cache = C>>(block: &B) -> Self {
        let d = block.dim();
        RkTape {
            stage_in: std::array::from_fn(|_| vec![0.0; d]),
            k: std::array::from_fn(|_| vec![0.0; d]),
            caches: (0..4).map(|_| block.new_cache()).collect(),
            inc: vec![0.0; d],
            gk: std::array::from_fn(|_| vec![0.0; d]),
            ds: vec![0.0; d],
        }
    }

    /// The combined increment `Σ alpha_i·k_i` (or `k_1` for one block).
    pub(crate) fn increment(&self) -> &[f64] {
        &self.inc
    }
}

/// Evaluates the stage combination at `z`, leaving the increment in the tape.
pub(crate) fn rk_increment_forward<B: Block>(
    block: &B,
    n_blocks: usize,
    rk: &RkCoefficients,
    dt: f64,
    z: &[f64],
    tape: &mut RkTape<B::Cache>,
) {
    tape.stage_in[0].copy_from_slice(z);
    block.forward(z, &mut tape.caches[0], &mut tape.k[0]);
    for i in 1..n_blocks {
        let h = rk.beta[i] * dt;
        let (done, rest) = tape.k.split_at_mut(i);
        let prev = &done[i - 1];
        for ((st, zj), kj) in tape.stage_in[i].iter_mut().zip(z).zip(prev) {
            *st = zj + h * kj;
        }
        block.forward(&tape.stage_in[i], &mut tape.caches[i], &mut rest[0]);
    }
    if n_blocks == 1 {
        tape.inc.copy_from_slice(&tape.k[0]);
    } else {
        let a = rk.alpha;
        let k = &tape.k;
        for (j, inc) in tape.inc.iter_mut().enumerate() {
            *inc = a[0] * k[0][j] + a[1] * k[1][j] + a[2] * k[2][j] + a[3] * k[3][j];
        }
    }
}

/// Backpropagates `g_inc = dL/d(increment)`. Block gradients accumulate into
/// `grad_block`; coefficient gradients into `grad_rk` when given; `dz` is
/// incremented by `dL/dz`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rk_increment_backward<B: Block>(
    block: &B,
    n_blocks: usize,
    rk: &RkCoefficients,
    dt: f64,
    tape: &mut RkTape<B::Cache>,
    g_inc: &[f64],
    grad_block: &mut B,
    mut grad_rk: Option<&mut RkCoefficients>,
    dz: &mut [f64],
) {
    if n_blocks == 1 {
        tape.gk[0].copy_from_slice(g_inc);
    } else {
        for i in 0..n_blocks {
            for (g, gi) in tape.gk[i].iter_mut().zip(g_inc) {
                *g = rk.alpha[i] * gi;
            }
            if let Some(gr) = grad_rk.as_deref_mut() {
                gr.alpha[i] += linalg::dot(g_inc, &tape.k[i]);
            }
        }
    }
    for i in (0..n_blocks).rev() {
        let RkTape {
            caches, gk, ds, k, ..
        } = tape;
        block.backward(&mut caches[i], &gk[i], grad_block, ds);
        for (d, s) in dz.iter_mut().zip(ds.iter()) {
            *d += s;
        }
        if i > 0 {
            let h = rk.beta[i] * dt;
            for (g, s) in gk[i - 1].iter_mut().zip(ds.iter()) {
                *g += h * s;
            }
            if let Some(gr) = grad_rk.as_deref_mut() {
                gr.beta[i] += dt * linalg::dot(ds, &k[i - 1]);
            }
        }
    }
}

/// A residual network `x -> x + dt·Σ alpha_i·k_i` over a shared block `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualNet<B> {
    pub block: B,
    pub n_blocks: usize,
    pub rk: RkCoefficients,
    #[serde(serialize_with = "linalg::serialize_f64")]
    pub dt: f64,
    pub norm: Option<Normalization>,
}

/// The bilinear residual network: one block (Euler-like) or four (RK4-like).
pub type BiNNModel = ResidualNet<BlockParams>;

impl<B: Block> ResidualNet<B> {
    pub fn new(block: B, n_blocks: usize, dt: f64) -> Result<Self> {
        let net = ResidualNet {
            block,
            n_blocks,
            rk: RkCoefficients::default(),
            dt,
            norm: None,
        };
        net.validate_structure()?;
        Ok(net)
    }

    pub fn with_norm(mut self, norm: Option<Normalization>) -> Result<Self> {
        self.norm = norm;
        self.validate_structure()?;
        Ok(self)
    }

    pub fn with_rk(mut self, rk: RkCoefficients) -> Result<Self> {
        rk.validate()?;
        self.rk = rk;
        Ok(self)
    }

    /// The same shared block inside an `n_blocks` architecture.
    pub fn with_blocks(&self, n_blocks: usize) -> Result<Self> {
        let mut net = self.clone();
        net.n_blocks = n_blocks;
        net.validate_structure()?;
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.block.dim()
    }

    pub(crate) fn validate_structure(&self) -> Result<()> {
        if self.n_blocks != 1 && self.n_blocks != 4 {
            return Err(Error::InvariantViolation(format!(
                "n_blocks must be 1 or 4, got {}",
                self.n_blocks
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvariantViolation(format!("dt must be positive, got {}", self.dt)));
        }
        self.rk.validate()?;
        if let Some(n) = &self.norm {
            n.validate()?;
            if n.dim() != self.dim() {
                return Err(Error::dim("normalization vs block", self.dim(), n.dim()));
            }
        }
        if !self.block.all_finite() {
            return Err(Error::NonFinite("block parameters".into()));
        }
        Ok(())
    }

    /// One forecast step `x_t -> x_{t+dt}`.
    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.dim() {
            return Err(Error::dim("model_forward", self.dim(), x.dim()));
        }
        let mut tape = self.new_tape();
        let out = Vector::from(self.forward_tape(x, &mut tape));
        if !out.is_finite() {
            return Err(Error::NonFinite("model_forward".into()));
        }
        Ok(out)
    }

    /// Gradients of `upstream · forward(x)` with respect to the shared
    /// parameters (and trainable coefficients) and to `x`.
    pub fn backward(&self, x: &Vector, upstream: &Vector) -> Result<(Self, Vector)> {
        if x.dim() != self.dim() {
            return Err(Error::dim("model_backward input", self.dim(), x.dim()));
        }
        if upstream.dim() != self.dim() {
            return Err(Error::dim("model_backward upstream", self.dim(), upstream.dim()));
        }
        let mut tape = self.new_tape();
        self.forward_tape(x, &mut tape);
        let mut grad = self.zeroed();
        let mut dx = Vector::zeros(self.dim());
        self.backward_tape(&mut tape, upstream, &mut grad, &mut dx);
        Ok((grad, dx))
    }

    /// The block expressed as a vector field in raw state coordinates.
    pub fn as_field(&self) -> LearnedField<'_, B> {
        LearnedField {
            net: self,
            scratch: RefCell::new((self.block.new_cache(), vec![0.0; self.dim()], vec![0.0; self.dim()])),
        }
    }
}

impl BiNNModel {
    pub fn block(&self) -> &BlockParams {
        &self.block
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        self.validate_structure()
    }
}

/// Forward/backward workspace for [`ResidualNet`].
pub struct ResidualTape<C> {
    rk: RkTape<C>,
    z: Vec<f64>,
    out_z: Vec<f64>,
    out: Vec<f64>,
    g_z: Vec<f64>,
    g_inc: Vec<f64>,
    dz: Vec<f64>,
}

impl<B: Block> ParamSet for ResidualNet<B> {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.block.tensors();
        if self.rk.trainable && self.n_blocks == 4 {
            t.push(&self.rk.alpha);
            // beta_1 multiplies k_0 = 0 and has no effect.
            t.push(&self.rk.beta[1..]);
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.block.tensors_mut();
        if self.rk.trainable && self.n_blocks == 4 {
            t.push(&mut self.rk.alpha);
            t.push(&mut self.rk.beta[1..]);
        }
        t
    }
}

impl<B: Block> Trainable for ResidualNet<B> {
    type Tape = ResidualTape<B::Cache>;

    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn output_dim(&self) -> usize {
        self.dim()
    }

    fn new_tape(&self) -> Self::Tape {
        let d = self.dim();
        ResidualTape {
            rk: RkTape::new(&self.block),
            z: vec![0.0; d],
            out_z: vec![0.0; d],
            out: vec![0.0; d],
            g_z: vec![0.0; d],
            g_inc: vec![0.0; d],
            dz: vec![0.0; d],
        }
    }

    fn forward_tape<'t>(&self, x: &[f64], tape: &'t mut Self::Tape) -> &'t [f64] {
        match &self.norm {
            Some(n) => n.to_standard(x, &mut tape.z),
            None => tape.z.copy_from_slice(x),
        }
        rk_increment_forward(&self.block, self.n_blocks, &self.rk, self.dt, &tape.z, &mut tape.rk);
        let dt = self.dt;
        for ((o, z), inc) in tape.out_z.iter_mut().zip(&tape.z).zip(tape.rk.increment()) {
            *o = z + dt * inc;
        }
        match &self.norm {
            Some(n) => n.from_standard(&tape.out_z, &mut tape.out),
            None => tape.out.copy_from_slice(&tape.out_z),
        }
        &tape.out
    }

    fn backward_tape(&self, tape: &mut Self::Tape, g_out: &[f64], grad: &mut Self, dx: &mut [f64]) {
        match &self.norm {
            Some(n) => {
                for ((g, go), s) in tape.g_z.iter_mut().zip(g_out).zip(n.std.iter()) {
                    *g = go * s;
                }
            }
            None => tape.g_z.copy_from_slice(g_out),
        }
        for (gi, gz) in tape.g_inc.iter_mut().zip(&tape.g_z) {
            *gi = self.dt * gz;
        }
        tape.dz.copy_from_slice(&tape.g_z);
        let grad_rk = if self.rk.trainable && self.n_blocks == 4 {
            Some(&mut grad.rk)
        } else {
            None
        };
        rk_increment_backward(
            &self.block,
            self.n_blocks,
            &self.rk,
            self.dt,
            &mut tape.rk,
            &tape.g_inc,
            &mut grad.block,
            grad_rk,
            &mut tape.dz,
        );
        match &self.norm {
            Some(n) => {
                for ((d, dz), s) in dx.iter_mut().zip(&tape.dz).zip(n.std.iter()) {
                    *d = dz / s;
                }
            }
            None => dx.copy_from_slice(&tape.dz),
        }
    }

    fn loss_scale(&self) -> Option<&[f64]> {
        self.norm.as_ref().map(|n| n.std.as_slice())
    }
}

/// A trained block used as an ODE right-hand side, `f(x) = std ⊙ F((x - mean)/std)`.
pub struct LearnedField<'a, B: Block> {
    net: &'a ResidualNet<B>,
    scratch: RefCell<(B::Cache, Vec<f64>, Vec<f64>)>,
}

impl<B: Block> VectorField for LearnedField<'_, B> {
    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        let mut guard = self.scratch.borrow_mut();
        let (cache, z, fz) = &mut *guard;
        match &self.net.norm {
            None => self.net.block.forward(x, cache, dx),
            Some(n) => {
                n.to_standard(x, z);
                self.net.block.forward(z, cache, fz);
                for ((d, f), s) in dx.iter_mut().zip(fz.iter()).zip(n.std.iter()) {
                    *d = s * f;
                }
            }
        }
    }
}
