//! The bilinear block, the shared-weight Runge-Kutta residual network, and
//! polynomial read-out of trained blocks.

mod block;
mod params;
mod polynomial;
mod residual;

pub use block::{glorot_bound, BlockCache, BlockParams};
pub(crate) use block::glorot_matrix;
pub use params::{Block, ParamSet, Trainable};
pub use polynomial::{expand_to_polynomial, quadratic_terms, PolynomialCoefficients};
pub(crate) use residual::{rk_increment_backward, rk_increment_forward, RkTape};
pub use residual::{
    BiNNModel, LearnedField, Normalization, ResidualNet, ResidualTape, RkCoefficients,
};
