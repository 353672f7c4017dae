//! Comparison models: sparse regression on a quadratic dictionary, analog
//! (nearest-neighbor) forecasting, and multilayer perceptrons used either as a
//! direct one-step map or as the block of a four-stage residual network.

mod analog;
mod mlp;
mod sparse;

pub use analog::{analog_forecast_step, AnalogConfig, AnalogForecaster, Bandwidth};
pub use mlp::{make_mlp_sl4, Activation, MlpCache, MlpForecaster, MlpParams, MlpSl4, MlpTape};
pub use sparse::{
    build_dictionary, estimate_derivatives, fit_sparse, fit_sparse_exact, sparse_forecast_step,
    stlsq_fit, DictionarySpec, SparseConfig, SparseModel,
};
