//! The model kinds compared in the forecasting experiments, their default
//! architectures per system, and one entry point that fits any of them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_sparse, make_mlp_sl4, Activation, AnalogConfig, AnalogForecaster, MlpForecaster, MlpParams,
    SparseConfig,
};
use crate::checkpoint::Model;
use crate::dynamics::{OdeSystem, SystemKind, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::evaluation::{Forecaster, SparseForecaster};
use crate::net::{expand_to_polynomial, BiNNModel, BlockParams, Normalization, PolynomialCoefficients};
use crate::rng::SeededRng;
use crate::latent::train_latent;
use crate::training::{evaluate_mse, make_pairs, train, train_binn, PairDataset, TrainConfig, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Binn1,
    Binn4,
    Mlp,
    MlpSl4,
    Sr,
    Af,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Binn1,
        ModelKind::Binn4,
        ModelKind::Mlp,
        ModelKind::MlpSl4,
        ModelKind::Sr,
        ModelKind::Af,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Binn1 => "binn1",
            ModelKind::Binn4 => "binn4",
            ModelKind::Mlp => "mlp",
            ModelKind::MlpSl4 => "mlp_sl4",
            ModelKind::Sr => "sr",
            ModelKind::Af => "af",
        }
    }

    /// Whether fitting runs the gradient-based trainer.
    pub fn is_trained(self) -> bool {
        !matches!(self, ModelKind::Sr | ModelKind::Af)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!("unknown model kind '{s}'; valid kinds: {}", names.join(", ")))
            })
    }
}

/// Architecture choices. Unset fields fall back to per-system defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelSettings {
    /// Linear units of the bilinear block (default: state dimension).
    pub p_lin: Option<usize>,
    /// Product units of the bilinear block (default: state dimension).
    pub p_bil: Option<usize>,
    pub mlp_hidden_layers: Option<usize>,
    pub mlp_width: Option<usize>,
    pub activation: Activation,
    /// Standardize states with training statistics. Defaults to on for the
    /// Oregonator and for the MLPs, off otherwise.
    pub normalize: Option<bool>,
    pub sparse: SparseConfig,
    pub analog: AnalogConfig,
}

impl ModelSettings {
    pub fn block_widths(&self, dim: usize) -> (usize, usize) {
        (self.p_lin.unwrap_or(dim), self.p_bil.unwrap_or(dim))
    }

    /// Hidden layer count and width: 5×6 for the three-variable systems,
    /// 10×80 (direct) or 11×80 (residual) for Lorenz-96.
    pub fn mlp_shape(&self, kind: ModelKind, system: SystemKind) -> (usize, usize) {
        let (layers, width) = match (system, kind) {
            (SystemKind::Lorenz96, ModelKind::MlpSl4) => (11, 80),
            (SystemKind::Lorenz96, _) => (10, 80),
            _ => (5, 6),
        };
        (self.mlp_hidden_layers.unwrap_or(layers), self.mlp_width.unwrap_or(width))
    }

    pub fn normalizes(&self, kind: ModelKind, system: SystemKind) -> bool {
        self.normalize.unwrap_or(match kind {
            ModelKind::Mlp | ModelKind::MlpSl4 => true,
            _ => system == SystemKind::Oregonator,
        })
    }
}

/// Result of [`fit_model`]. Analog forecasting keeps its training pairs
/// instead of parameters and has no checkpoint form.
#[derive(Debug, Clone)]
pub enum Fitted {
    Model { model: Model, history: Option<TrainHistory> },
    Analog(AnalogForecaster),
}

impl Fitted {
    pub fn forecaster(&self, dt: f64) -> Box<dyn Forecaster> {
        match self {
            Fitted::Model { model, .. } => as_forecaster(model, dt),
            Fitted::Analog(af) => Box::new(af.clone()),
        }
    }
}

/// Untrained model of a gradient-trained kind, initialized from `seed`, with
/// normalization statistics taken from the training series. `None` for the
/// kinds fitted in closed form or lazily.
pub fn init_model(
    kind: ModelKind,
    settings: &ModelSettings,
    system: &OdeSystem,
    train_series: &Trajectory,
    seed: u64,
) -> Result<Option<Model>> {
    let d = system.dim();
    if train_series.dim() != d {
        return Err(Error::dim("training series", d, train_series.dim()));
    }
    if !kind.is_trained() {
        return Ok(None);
    }
    let dt = train_series.h();
    let mut rng = SeededRng::new(seed).derive("init");
    let norm = if settings.normalizes(kind, system.kind()) {
        Some(Normalization::from_data(train_series.states())?)
    } else {
        None
    };
    let model = match kind {
        ModelKind::Binn1 | ModelKind::Binn4 => {
            let n_blocks = if kind == ModelKind::Binn1 { 1 } else { 4 };
            let (p_lin, p_bil) = settings.block_widths(d);
            let block = BlockParams::init(d, p_lin, p_bil, &mut rng)?;
            Model::Binn(BiNNModel::new(block, n_blocks, dt)?.with_norm(norm)?)
        }
        ModelKind::Mlp | ModelKind::MlpSl4 => {
            let (layers, width) = settings.mlp_shape(kind, system.kind());
            let mlp = MlpParams::square(d, layers, width, settings.activation, &mut rng)?;
            if kind == ModelKind::Mlp {
                Model::Mlp(MlpForecaster::new(mlp, norm)?)
            } else {
                Model::MlpSl4(make_mlp_sl4(mlp, dt)?.with_norm(norm)?)
            }
        }
        ModelKind::Sr | ModelKind::Af => unreachable!("closed-form kinds return early"),
    };
    Ok(Some(model))
}

/// Runs the trainer on a gradient-trained model.
pub fn train_model(model: Model, data: &PairDataset, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    match model {
        Model::Binn(m) => train_binn(m, data, config).map(|(m, h)| (Model::Binn(m), h)),
        Model::Mlp(m) => train(m, data, config).map(|(m, h)| (Model::Mlp(m), h)),
        Model::MlpSl4(m) => train(m, data, config).map(|(m, h)| (Model::MlpSl4(m), h)),
        Model::Latent(m) => train_latent(m, data, config).map(|(m, h)| (Model::Latent(m), h)),
        Model::Sparse(_) => Err(Error::InvalidArgument(
            "sparse models are fitted in closed form, not trained".into(),
        )),
    }
}

/// One-step loss of a gradient-trained model, in the units it is trained in.
pub fn model_mse(model: &Model, data: &PairDataset) -> Result<f64> {
    match model {
        Model::Binn(m) => Ok(evaluate_mse(m, data)),
        Model::Mlp(m) => Ok(evaluate_mse(m, data)),
        Model::MlpSl4(m) => Ok(evaluate_mse(m, data)),
        Model::Latent(m) => Ok(evaluate_mse(m, data)),
        Model::Sparse(_) => Err(Error::InvalidArgument("sparse models have no training loss".into())),
    }
}

/// Fits a model of the given kind to a training series. Trained kinds
/// initialize from `config.seed`; the step of the series becomes the model
/// step.
pub fn fit_model(
    kind: ModelKind,
    settings: &ModelSettings,
    system: &OdeSystem,
    train_series: &Trajectory,
    config: &TrainConfig,
) -> Result<Fitted> {
    match init_model(kind, settings, system, train_series, config.seed)? {
        Some(model) => {
            let (model, history) = train_model(model, &make_pairs(train_series)?, config)?;
            Ok(Fitted::Model {
                model,
                history: Some(history),
            })
        }
        None if kind == ModelKind::Sr => Ok(Fitted::Model {
            model: Model::Sparse(fit_sparse(train_series, &settings.sparse)?),
            history: None,
        }),
        None => Ok(Fitted::Analog(AnalogForecaster::new(
            make_pairs(train_series)?,
            settings.analog,
        )?)),
    }
}

/// One-step predictor for a stored model. Sparse models are advanced by RK4
/// at `dt`; the other kinds carry their own step.
pub fn as_forecaster(model: &Model, dt: f64) -> Box<dyn Forecaster> {
    match model {
        Model::Binn(m) => Box::new(m.clone()),
        Model::Mlp(m) => Box::new(m.clone()),
        Model::MlpSl4(m) => Box::new(m.clone()),
        Model::Sparse(m) => Box::new(SparseForecaster { model: m.clone(), dt }),
        Model::Latent(m) => Box::new(m.clone()),
    }
}

/// Explicit polynomial vector field of the models that have one, in raw
/// state coordinates.
pub fn identified_polynomial(model: &Model) -> Option<Result<PolynomialCoefficients>> {
    match model {
        Model::Binn(m) => Some(expand_to_polynomial(m.block(), m.norm.as_ref())),
        Model::Sparse(m) => Some(m.to_polynomial()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_dataset, DatasetSpec};
    use crate::evaluation::rmse_at_horizons;

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        let err = "cnn".parse::<ModelKind>().unwrap_err().to_string();
        assert!(err.contains("binn1") && err.contains("af"), "{err}");
    }

    #[test]
    fn default_shapes_follow_system() {
        let s = ModelSettings::default();
        assert_eq!(s.mlp_shape(ModelKind::Mlp, SystemKind::Lorenz63), (5, 6));
        assert_eq!(s.mlp_shape(ModelKind::Mlp, SystemKind::Lorenz96), (10, 80));
        assert_eq!(s.mlp_shape(ModelKind::MlpSl4, SystemKind::Lorenz96), (11, 80));
        assert_eq!(s.block_widths(40), (40, 40));
        assert!(s.normalizes(ModelKind::Binn4, SystemKind::Oregonator));
        assert!(!s.normalizes(ModelKind::Binn4, SystemKind::Lorenz63));
        assert!(s.normalizes(ModelKind::Mlp, SystemKind::Lorenz63));
    }

    #[test]
    fn every_kind_fits_and_forecasts() {
        let system = OdeSystem::lorenz63();
        let spec = DatasetSpec {
            n_train: 400,
            n_test: 30,
            spinup: 100,
            ..DatasetSpec::standard(system, 1)
        };
        let (train_series, test) = generate_dataset(&spec).unwrap();
        let config = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        for kind in ModelKind::ALL {
            let fitted = fit_model(kind, &ModelSettings::default(), &system, &train_series, &config).unwrap();
            if let Fitted::Model { history, .. } = &fitted {
                assert_eq!(history.is_some(), kind.is_trained(), "{kind}");
            }
            let report = rmse_at_horizons(kind.name(), fitted.forecaster(0.01).as_ref(), &test, &[1, 4, 8]).unwrap();
            assert!(report.rmse_per_horizon.iter().all(|r| r.is_finite()), "{kind}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected_before_training() {
        let (series, _) = generate_dataset(&DatasetSpec {
            n_train: 50,
            n_test: 10,
            spinup: 0,
            ..DatasetSpec::standard(OdeSystem::lorenz63(), 0)
        })
        .unwrap();
        let err = fit_model(
            ModelKind::Binn4,
            &ModelSettings::default(),
            &OdeSystem::lorenz96(),
            &series,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
