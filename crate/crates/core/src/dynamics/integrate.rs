//! Fixed-step (Euler, RK4) and adaptive Dormand-Prince 5(4) integrators.

use serde::{Deserialize, Serialize};

use super::systems::VectorField;
use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Classic fourth-order weights.
pub const RK4_ALPHA: [f64; 4] = [1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
/// Stage offsets; the first entry multiplies `k_0 = 0` and never matters.
pub const RK4_BETA: [f64; 4] = [1.0, 0.5, 0.5, 1.0];

/// Any state entry beyond this magnitude counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
    AdaptiveRk45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Accepted plus rejected steps allowed within one output interval.
    pub max_substeps: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            scheme: Scheme::AdaptiveRk45,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_substeps: 10_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive (rel {}, abs {})",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.max_substeps == 0 {
            return Err(Error::InvalidArgument("max_substeps must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_step_input<F: VectorField>(field: &F, x: &Vector, dt: f64) -> Result<()> {
    if x.dim() != field.dim() {
        return Err(Error::dim("integrator state", field.dim(), x.dim()));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// `x + dt·f(x)`.
pub fn euler_step<F: VectorField>(field: &F, x: &Vector, dt: f64) -> Result<Vector> {
    check_step_input(field, x, dt)?;
    let mut k = vec![0.0; x.dim()];
    field.eval(x, &mut k);
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("euler stage".into()));
    }
    Ok(x.iter().zip(&k).map(|(xi, ki)| xi + dt * ki).collect())
}

/// Scratch buffers for repeated RK4 steps.
pub(crate) struct Rk4Scratch {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl Rk4Scratch {
    pub(crate) fn new(dim: usize) -> Self {
        Rk4Scratch {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            stage: vec![0.0; dim],
        }
    }
}

/// One classic RK4 step into `out`. Returns false when a stage is non-finite.
///
/// The arithmetic mirrors the residual network forward pass term for term so
/// the two agree to the last bit when fed the same field.
pub(crate) fn rk4_step_into<F: VectorField>(
    field: &F,
    x: &[f64],
    dt: f64,
    s: &mut Rk4Scratch,
    out: &mut [f64],
) -> bool {
    field.eval(x, &mut s.k[0]);
    for i in 1..4 {
        let (done, rest) = s.k.split_at_mut(i);
        let prev = &done[i - 1];
        let h = RK4_BETA[i] * dt;
        for ((st, xj), kj) in s.stage.iter_mut().zip(x).zip(prev) {
            *st = xj + h * kj;
        }
        field.eval(&s.stage, &mut rest[0]);
    }
    let mut finite = true;
    for j in 0..x.len() {
        let inc = RK4_ALPHA[0] * s.k[0][j]
            + RK4_ALPHA[1] * s.k[1][j]
            + RK4_ALPHA[2] * s.k[2][j]
            + RK4_ALPHA[3] * s.k[3][j];
        finite &= inc.is_finite();
        out[j] = x[j] + dt * inc;
    }
    finite
}

/// One classic fourth-order Runge-Kutta step.
pub fn rk4_step<F: VectorField>(field: &F, x: &Vector, dt: f64) -> Result<Vector> {
    check_step_input(field, x, dt)?;
    let mut scratch = Rk4Scratch::new(x.dim());
    let mut out = Vector::zeros(x.dim());
    if !rk4_step_into(field, x, dt, &mut scratch, &mut out) {
        return Err(Error::NonFinite("rk4 stage".into()));
    }
    Ok(out)
}

/// `n_steps` fixed steps; the result holds `n_steps + 1` states.
pub fn integrate_fixed<F: VectorField>(
    field: &F,
    x0: &Vector,
    dt: f64,
    n_steps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    check_step_input(field, x0, dt)?;
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    let d = x0.dim();
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.clone());
    let mut scratch = Rk4Scratch::new(d);
    let mut k = vec![0.0; d];
    for step in 1..=n_steps {
        let x = states.last().expect("non-empty");
        let mut next = Vector::zeros(d);
        match scheme {
            Scheme::Euler => {
                field.eval(x, &mut k);
                for j in 0..d {
                    next[j] = x[j] + dt * k[j];
                }
            }
            Scheme::Rk4 => {
                rk4_step_into(field, x, dt, &mut scratch, &mut next);
            }
            Scheme::AdaptiveRk45 => {
                return Err(Error::InvalidArgument(
                    "integrate_fixed needs a fixed-step scheme".into(),
                ))
            }
        }
        if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Diverged { step });
        }
        states.push(next);
    }
    Trajectory::new(0.0, dt, states)
}

// Dormand-Prince 5(4) tableau. Fields are autonomous, so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order solution minus embedded fourth-order solution.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct DoPri<'f, F> {
    field: &'f F,
    cfg: IntegratorConfig,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y_new: Vec<f64>,
}

impl<F: VectorField> DoPri<'_, F> {
    fn scaled_norm(&self, y: &[f64], v: &[f64]) -> f64 {
        let s: f64 = y
            .iter()
            .zip(v)
            .map(|(yi, vi)| {
                let sc = self.cfg.abs_tol + self.cfg.rel_tol * yi.abs();
                (vi / sc) * (vi / sc)
            })
            .sum();
        (s / y.len() as f64).sqrt()
    }

    fn initial_step(&self, y: &[f64], f0: &[f64], max_h: f64) -> f64 {
        let d0 = self.scaled_norm(y, y);
        let d1 = self.scaled_norm(y, f0);
        let h = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h.min(max_h)
    }

    /// Attempts one step of size `h` from `y` (with `k[0] = f(y)`). Returns the
    /// scaled error estimate; the candidate solution is left in `y_new`.
    fn attempt(&mut self, y: &[f64], h: f64) -> f64 {
        let d = y.len();
        for s in 1..7 {
            for j in 0..d {
                let mut acc = 0.0;
                for (r, a) in A[s][..s].iter().enumerate() {
                    acc += a * self.k[r][j];
                }
                self.stage[j] = y[j] + h * acc;
            }
            let (_, rest) = self.k.split_at_mut(s);
            self.field.eval(&self.stage, &mut rest[0]);
        }
        // Stage 7 was evaluated at the fifth-order solution (FSAL).
        self.y_new.copy_from_slice(&self.stage);
        let mut acc = 0.0;
        for j in 0..d {
            let mut e = 0.0;
            for (r, ec) in E.iter().enumerate() {
                e += ec * self.k[r][j];
            }
            let sc = self.cfg.abs_tol + self.cfg.rel_tol * y[j].abs().max(self.y_new[j].abs());
            let r = h * e / sc;
            acc += r * r;
        }
        (acc / d as f64).sqrt()
    }
}

/// Integrates with error control, sampling the solution at `t0 + k·h` for
/// `k = 0..=n_steps`. Steps are clipped so every output time is hit exactly.
pub fn integrate_adaptive_steps<F: VectorField>(
    field: &F,
    x0: &Vector,
    t0: f64,
    h: f64,
    n_steps: usize,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    config.validate()?;
    check_step_input(field, x0, h)?;
    let d = x0.dim();
    let mut dp = DoPri {
        field,
        cfg: *config,
        k: std::array::from_fn(|_| vec![0.0; d]),
        stage: vec![0.0; d],
        y_new: vec![0.0; d],
    };
    let mut y = x0.as_slice().to_vec();
    let mut t = t0;
    field.eval(&y, &mut dp.k[0]);
    let mut step = dp.initial_step(&y, &dp.k[0].clone(), h);
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.clone());

    for out_idx in 1..=n_steps {
        let t_out = t0 + out_idx as f64 * h;
        let mut substeps: u64 = 0;
        loop {
            let remaining = t_out - t;
            if remaining <= 0.0 {
                break;
            }
            let clipped = step >= remaining;
            let this_step = if clipped { remaining } else { step };
            if this_step < 16.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t });
            }
            substeps += 1;
            if substeps > config.max_substeps {
                return Err(Error::SubstepBudget {
                    t,
                    max_substeps: config.max_substeps,
                });
            }
            let err = dp.attempt(&y, this_step);
            if err.is_finite() && err <= 1.0 {
                t = if clipped { t_out } else { t + this_step };
                y.copy_from_slice(&dp.y_new);
                let (first, rest) = dp.k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // A clipped step says nothing about the natural step size.
                if !clipped || this_step * fac < step {
                    step = this_step * fac;
                }
            } else {
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.1, 1.0)
                } else {
                    0.1
                };
                step = this_step * fac;
            }
        }
        if y.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Diverged { step: out_idx });
        }
        states.push(Vector::from(y.as_slice()));
    }
    Trajectory::new(t0, h, states)
}

/// Adaptive integration over `t_span`, sampled every `h`.
pub fn integrate_adaptive<F: VectorField>(
    field: &F,
    x0: &Vector,
    t_span: (f64, f64),
    h: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(h > 0.0) || !(t1 > t0) {
        return Err(Error::InvalidArgument(format!(
            "need t1 > t0 and h > 0 (t_span {t_span:?}, h {h})"
        )));
    }
    let n = ((t1 - t0) / h * (1.0 + 1e-12)).floor() as usize;
    if n == 0 {
        return Err(Error::InvalidArgument("time span shorter than one output step".into()));
    }
    integrate_adaptive_steps(field, x0, t0, h, n, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::systems::{FnField, OdeSystem};

    fn decay() -> FnField<impl Fn(&[f64], &mut [f64])> {
        FnField::new(1, |x: &[f64], dx: &mut [f64]| dx[0] = -x[0])
    }

    fn zero_field(d: usize) -> FnField<impl Fn(&[f64], &mut [f64])> {
        FnField::new(d, |_: &[f64], dx: &mut [f64]| dx.fill(0.0))
    }

    #[test]
    fn euler_examples() {
        let x = Vector::from([1.5, -2.0]);
        assert_eq!(euler_step(&zero_field(2), &x, 0.1).unwrap(), x);
        let y = euler_step(&decay(), &Vector::from([1.0]), 0.1).unwrap();
        assert!((y[0] - 0.9).abs() < 1e-15);
        let l63 = OdeSystem::lorenz63();
        assert_eq!(euler_step(&l63, &Vector::zeros(3), 0.01).unwrap(), Vector::zeros(3));
        let bad = FnField::new(1, |_: &[f64], dx: &mut [f64]| dx[0] = f64::NAN);
        assert!(euler_step(&bad, &Vector::from([1.0]), 0.1).is_err());
        assert!(euler_step(&decay(), &Vector::from([1.0]), 0.0).is_err());
    }

    #[test]
    fn rk4_examples() {
        let x = Vector::from([0.3]);
        assert_eq!(rk4_step(&zero_field(1), &x, 0.1).unwrap(), x);
        let h: f64 = 0.1;
        let factor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        let y = rk4_step(&decay(), &Vector::from([1.0]), h).unwrap();
        assert!((y[0] - factor).abs() < 1e-15);
        assert!((y[0] - 0.904_837_5).abs() < 1e-7);
        let q = 72f64.sqrt();
        let fp = Vector::from([q, q, 27.0]);
        let out = rk4_step(&OdeSystem::lorenz63(), &fp, 0.01).unwrap();
        for (a, b) in out.iter().zip(fp.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_integration_examples() {
        let l63 = OdeSystem::lorenz63();
        let x0 = Vector::from([1.0, 2.0, 3.0]);
        let tr = integrate_fixed(&l63, &x0, 0.01, 1, Scheme::Rk4).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr.states()[1], rk4_step(&l63, &x0, 0.01).unwrap());

        let tr = integrate_fixed(&zero_field(3), &x0, 0.1, 100, Scheme::Rk4).unwrap();
        assert!(tr.states().iter().all(|s| *s == x0));

        let tr = integrate_fixed(&decay(), &Vector::from([1.0]), 0.1, 10, Scheme::Rk4).unwrap();
        let expected = 0.904_837_5f64.powi(10);
        assert!((tr.states()[10][0] - expected).abs() < 1e-6);

        let blowup = FnField::new(1, |x: &[f64], dx: &mut [f64]| dx[0] = x[0] * x[0]);
        match integrate_fixed(&blowup, &Vector::from([1.0]), 0.5, 100, Scheme::Euler) {
            Err(Error::Diverged { step }) => assert!(step > 1 && step < 100),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn adaptive_matches_exponential() {
        let cfg = IntegratorConfig {
            rel_tol: 1e-8,
            ..Default::default()
        };
        let tr = integrate_adaptive(&decay(), &Vector::from([1.0]), (0.0, 5.0), 0.1, &cfg).unwrap();
        assert_eq!(tr.len(), 51);
        for (k, s) in tr.states().iter().enumerate() {
            let t = k as f64 * 0.1;
            let exact = (-t).exp();
            assert!((s[0] - exact).abs() <= 10.0 * cfg.rel_tol * exact.max(1e-3));
        }
    }

    #[test]
    fn adaptive_zero_field_is_constant() {
        let x0 = Vector::from([4.0, -1.0]);
        let tr = integrate_adaptive(&zero_field(2), &x0, (0.0, 1.0), 0.1, &IntegratorConfig::default())
            .unwrap();
        assert!(tr.states().iter().all(|s| *s == x0));
    }

    #[test]
    fn adaptive_self_convergence_on_lorenz63() {
        let l63 = OdeSystem::lorenz63();
        let x0 = Vector::from([1.0, 1.0, 1.0]);
        let loose = IntegratorConfig {
            rel_tol: 1e-8,
            ..Default::default()
        };
        let tight = IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let a = integrate_adaptive(&l63, &x0, (0.0, 1.0), 0.01, &loose).unwrap();
        let b = integrate_adaptive(&l63, &x0, (0.0, 1.0), 0.01, &tight).unwrap();
        for (sa, sb) in a.states().iter().zip(b.states()) {
            for (x, y) in sa.iter().zip(sb.iter()) {
                assert!((x - y).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn adaptive_reports_underflow_and_budget() {
        // Finite-time blowup of dx/dt = x² at t = 1.
        let blowup = FnField::new(1, |x: &[f64], dx: &mut [f64]| dx[0] = x[0] * x[0]);
        let r = integrate_adaptive(&blowup, &Vector::from([1.0]), (0.0, 2.0), 0.1, &IntegratorConfig::default());
        match r {
            Err(Error::StepUnderflow { t }) | Err(Error::SubstepBudget { t, .. }) => {
                // The numerical solution may overshoot the pole slightly.
                assert!(t > 0.9 && t < 1.01, "stopped at {t}")
            }
            Err(Error::Diverged { step }) => assert!(step >= 9),
            other => panic!("expected failure near t=1, got {other:?}"),
        }
        let cfg = IntegratorConfig {
            max_substeps: 2,
            rel_tol: 1e-12,
            ..Default::default()
        };
        assert!(matches!(
            integrate_adaptive(&OdeSystem::lorenz63(), &Vector::from([1.0, 1.0, 1.0]), (0.0, 1.0), 0.5, &cfg),
            Err(Error::SubstepBudget { .. })
        ));
    }
}
