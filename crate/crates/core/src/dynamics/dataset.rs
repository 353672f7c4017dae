//! Training and test series generated from one long adaptive integration.

use serde::{Deserialize, Serialize};

use super::integrate::{integrate_adaptive_steps, IntegratorConfig};
use super::systems::{OdeSystem, VectorField};
use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::rng::SeededRng;

/// Relative size of the seeded perturbation applied to the base initial condition.
pub const INITIAL_PERTURBATION: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub system: OdeSystem,
    pub n_train: usize,
    pub n_test: usize,
    pub h: f64,
    /// Output steps integrated and discarded before the training segment.
    pub spinup: usize,
    pub seed: u64,
    pub integrator: IntegratorConfig,
}

impl DatasetSpec {
    /// 50000 training states, 1000 test states, 1000 spinup steps.
    pub fn standard(system: OdeSystem, seed: u64) -> Self {
        DatasetSpec {
            system,
            n_train: 50_000,
            n_test: 1_000,
            h: system.default_step(),
            spinup: 1_000,
            seed,
            integrator: IntegratorConfig::default(),
        }
    }

    /// Base initial condition with a small seeded perturbation.
    pub fn initial_condition(&self) -> Vector {
        let mut rng = SeededRng::new(self.seed).derive("data");
        self.system
            .default_initial_condition()
            .iter()
            .map(|&x| x + INITIAL_PERTURBATION * (1.0 + x.abs()) * rng.uniform(-1.0, 1.0))
            .collect()
    }
}

/// Integrates `spinup + n_train + n_test - 1` steps, drops the spinup, and
/// splits the rest into consecutive, non-overlapping train and test segments.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<(Trajectory, Trajectory)> {
    if spec.n_train < 2 || spec.n_test < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two train and test states (got {} and {})",
            spec.n_train, spec.n_test
        )));
    }
    let x0 = spec.initial_condition();
    debug_assert_eq!(x0.dim(), spec.system.dim());
    let total = spec.spinup + spec.n_train + spec.n_test;
    let full = integrate_adaptive_steps(&spec.system, &x0, 0.0, spec.h, total - 1, &spec.integrator)?;
    let train = full.segment(spec.spinup, spec.spinup + spec.n_train)?;
    let test = full.segment(spec.spinup + spec.n_train, total)?;
    Ok((train, test))
}
