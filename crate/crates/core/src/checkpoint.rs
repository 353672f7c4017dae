//! Versioned JSON container for every trainable model in the crate.
//!
//! ```json
//! { "format": "rkbilinear-checkpoint", "version": 1, "state_dim": 3,
//!   "model": { "kind": "binn", ... } }
//! ```
//!
//! Parameters are written with 17 significant digits, so a save/load/save
//! cycle reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{MlpForecaster, MlpSl4, SparseModel};
use crate::error::{Error, Result};
use crate::latent::LatentModel;
use crate::net::{BiNNModel, ParamSet};

pub const FORMAT: &str = "rkbilinear-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Binn(BiNNModel),
    Mlp(MlpForecaster),
    MlpSl4(MlpSl4),
    Sparse(SparseModel),
    Latent(LatentModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Binn(_) => "binn",
            Model::Mlp(_) => "mlp",
            Model::MlpSl4(_) => "mlp_sl4",
            Model::Sparse(_) => "sparse",
            Model::Latent(_) => "latent",
        }
    }

    /// Dimension of the states the model forecasts.
    pub fn state_dim(&self) -> usize {
        match self {
            Model::Binn(m) => m.dim(),
            Model::Mlp(m) => m.dim(),
            Model::MlpSl4(m) => m.dim(),
            Model::Sparse(m) => m.dim(),
            Model::Latent(m) => m.obs_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Binn(m) => m.validate(),
            Model::Mlp(m) => m.validate(),
            Model::MlpSl4(m) => {
                m.block.validate()?;
                if m.block.input_dim() != m.block.output_dim() {
                    return Err(Error::dim("MLP residual block", m.block.input_dim(), m.block.output_dim()));
                }
                m.validate_structure()
            }
            Model::Sparse(m) => m.validate(),
            Model::Latent(m) => m.validate(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Model::Binn(m) => m.num_params(),
            Model::Mlp(m) => m.num_params(),
            Model::MlpSl4(m) => m.num_params(),
            Model::Sparse(m) => m.xi.as_slice().len(),
            Model::Latent(m) => m.num_params(),
        }
    }
}

#[derive(Serialize)]
struct Container<'a> {
    format: &'static str,
    version: u32,
    state_dim: usize,
    model: &'a Model,
}

/// Serializes a validated model into the container format.
pub fn to_json_string(model: &Model) -> Result<String> {
    model.validate()?;
    let c = Container {
        format: FORMAT,
        version: VERSION,
        state_dim: model.state_dim(),
        model,
    };
    let mut s = serde_json::to_string_pretty(&c).map_err(|e| Error::Malformed(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Parses a container. Distinguishes unreadable documents
/// ([`Error::Malformed`]), other format versions ([`Error::VersionMismatch`])
/// and models that parse but break an invariant.
pub fn from_json_str(text: &str) -> Result<Model> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Malformed(format!("checkpoint is not valid JSON: {e}")))?;
    let obj = doc.as_object().ok_or_else(|| Error::Malformed("checkpoint root is not an object".into()))?;
    match obj.get("format").and_then(Value::as_str) {
        Some(FORMAT) => {}
        other => {
            return Err(Error::Malformed(format!("unexpected checkpoint format {other:?}")));
        }
    }
    match obj.get("version") {
        Some(v) if v.as_u64() == Some(u64::from(VERSION)) => {}
        Some(v) => {
            return Err(Error::VersionMismatch {
                found: v.to_string(),
                expected: VERSION,
            })
        }
        None => return Err(Error::Malformed("checkpoint has no version".into())),
    }
    let model_value = obj.get("model").ok_or_else(|| Error::Malformed("checkpoint has no model".into()))?;
    let model: Model = Model::deserialize(model_value).map_err(|e| Error::Malformed(format!("checkpoint model: {e}")))?;
    model.validate()?;
    if let Some(d) = obj.get("state_dim") {
        let d = d.as_u64().ok_or_else(|| Error::Malformed("state_dim is not an integer".into()))? as usize;
        if d != model.state_dim() {
            return Err(Error::dim("checkpoint state_dim", d, model.state_dim()));
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json_string(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    from_json_str(&std::fs::read_to_string(path)?)
}

/// Loads a checkpoint that must hold a bilinear residual network.
pub fn load_binn(path: impl AsRef<Path>) -> Result<BiNNModel> {
    match load_checkpoint(path)? {
        Model::Binn(m) => Ok(m),
        other => Err(Error::InvalidArgument(format!(
            "checkpoint holds a '{}' model, expected 'binn'",
            other.kind()
        ))),
    }
}
