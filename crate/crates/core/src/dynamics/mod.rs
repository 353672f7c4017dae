//! Reference ODE systems, integrators, and dataset generation.

mod dataset;
mod integrate;
mod systems;
mod trajectory;

pub use dataset::{generate_dataset, DatasetSpec, INITIAL_PERTURBATION};
pub use integrate::{
    euler_step, integrate_adaptive, integrate_adaptive_steps, integrate_fixed, rk4_step,
    IntegratorConfig, Scheme, DIVERGENCE_BOUND, RK4_ALPHA, RK4_BETA,
};
pub use systems::{
    lorenz63_field, lorenz96_field, oregonator_field, FnField, OdeSystem, SystemKind,
    VectorField, LORENZ96_DIM,
};
pub use trajectory::Trajectory;
