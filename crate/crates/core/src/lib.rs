//! Learning ODE dynamics from state time series with bilinear residual
//! networks whose computational graph is a Runge-Kutta step.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`] and [`rng`]: dense `f64` arithmetic and seeded streams.
//! * [`dynamics`]: Lorenz-63, Oregonator and Lorenz-96, fixed-step and
//!   adaptive integrators, dataset generation.
//! * [`net`]: the bilinear block, the shared-weight Runge-Kutta residual
//!   network, polynomial expansion of a trained block.
//! * [`training`]: one-step supervised training with Adam.
//! * [`baselines`]: sparse regression, analog forecasting, MLPs.
//! * [`latent`]: latent low-dimensional dynamics behind a linear observation map.
//! * [`evaluation`]: rollouts, horizon RMSE, coefficient identification error.
//! * [`checkpoint`]: the versioned model container.
//! * [`models`]: model kinds, default architectures, fitting by kind.

pub mod baselines;
pub mod checkpoint;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod latent;
pub mod linalg;
pub mod models;
pub mod net;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use rng::SeededRng;
