//! Run configuration: one TOML document, optionally patched by command-line
//! overrides, resolved into typed settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rkbilinear::dynamics::{DatasetSpec, IntegratorConfig, OdeSystem, SystemKind};
use rkbilinear::latent::LatentExperiment;
use rkbilinear::models::{ModelKind, ModelSettings};
use rkbilinear::training::TrainConfig;

use crate::error::{io_error, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    /// Fans out to data generation, initialization and shuffling.
    pub seed: u64,
    pub model: String,
    /// Forecast horizons in steps of the series.
    pub horizons: Vec<usize>,
    pub data: DataConfig,
    pub paths: Paths,
    pub architecture: ModelSettings,
    pub train: TrainConfig,
    pub latent: LatentExperiment,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemKind::Lorenz63.name().into(),
            seed: 0,
            model: ModelKind::Binn4.name().into(),
            horizons: vec![1, 4, 8],
            data: DataConfig::default(),
            paths: Paths::default(),
            architecture: ModelSettings::default(),
            train: TrainConfig::default(),
            latent: LatentExperiment::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub spinup: usize,
    /// Sampling step; the system default when absent.
    pub h: Option<f64>,
    pub integrator: IntegratorConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        let standard = DatasetSpec::standard(OdeSystem::lorenz63(), 0);
        DataConfig {
            n_train: standard.n_train,
            n_test: standard.n_test,
            spinup: standard.spinup,
            h: None,
            integrator: standard.integrator,
        }
    }
}

/// File locations. Unset inputs are looked up in `out_dir`, which is where
/// every command writes, so `generate`, `train` and `evaluate` chain without
/// further flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out_dir: PathBuf::from("run"),
            train_data: None,
            test_data: None,
            checkpoint: None,
        }
    }
}

impl Paths {
    pub fn train_data(&self) -> PathBuf {
        self.train_data.clone().unwrap_or_else(|| self.out_dir.join("train.csv"))
    }

    pub fn test_data(&self) -> PathBuf {
        self.test_data.clone().unwrap_or_else(|| self.out_dir.join("test.csv"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.json"))
    }
}

impl RunConfig {
    /// Reads an optional config file, applies `key=value` overrides in order,
    /// and makes the run seed authoritative for every seeded component.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> CliResult<RunConfig> {
        let mut doc = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(io_error(path))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_key(&mut doc, key, value.clone())?;
        }
        let mut cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid configuration: {}", e.message())))?;
        cfg.train.seed = cfg.seed;
        cfg.latent.seed = cfg.seed;
        cfg.system_kind()?;
        cfg.model_kind()?;
        Ok(cfg)
    }

    pub fn system_kind(&self) -> CliResult<SystemKind> {
        self.system.parse().map_err(|e: rkbilinear::Error| CliError::Usage(strip_prefix(e)))
    }

    pub fn ode_system(&self) -> CliResult<OdeSystem> {
        Ok(OdeSystem::from_kind(self.system_kind()?))
    }

    pub fn model_kind(&self) -> CliResult<ModelKind> {
        self.model.parse().map_err(|e: rkbilinear::Error| CliError::Usage(strip_prefix(e)))
    }

    pub fn dataset_spec(&self) -> CliResult<DatasetSpec> {
        let system = self.ode_system()?;
        Ok(DatasetSpec {
            n_train: self.data.n_train,
            n_test: self.data.n_test,
            spinup: self.data.spinup,
            h: self.data.h.unwrap_or(system.default_step()),
            integrator: self.data.integrator,
            ..DatasetSpec::standard(system, self.seed)
        })
    }
}

fn strip_prefix(e: rkbilinear::Error) -> String {
    match e {
        rkbilinear::Error::InvalidArgument(msg) => msg,
        other => other.to_string(),
    }
}

/// Interprets an override as a TOML value, falling back to a bare string so
/// `system=lorenz96` needs no quoting.
pub fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_key(doc: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Usage(format!("empty override key '{key}'")))?;
    let mut table = doc;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override '{key}': '{part}' is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Parses a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, toml::Value)> {
        pairs.iter().map(|(k, v)| parse_override(&format!("{k}={v}")).unwrap()).collect()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let again: RunConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn overrides_reach_nested_keys_and_win_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "system = \"lorenz96\"\nseed = 3\n[train]\nepochs = 7\n").unwrap();
        let cfg = RunConfig::resolve(
            Some(&path),
            &ov(&[("train.learning_rate", "0.01"), ("seed", "9"), ("architecture.p_bil", "60")]),
        )
        .unwrap();
        assert_eq!(cfg.system, "lorenz96");
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.architecture.p_bil, Some(60));
        assert_eq!((cfg.seed, cfg.train.seed, cfg.latent.seed), (9, 9, 9));
    }

    #[test]
    fn bad_names_are_usage_errors() {
        let e = RunConfig::resolve(None, &ov(&[("system", "lorenz84")])).unwrap_err();
        assert!(matches!(e, CliError::Usage(ref m) if m.contains("lorenz63, oregonator, lorenz96")));
        let e = RunConfig::resolve(None, &ov(&[("model", "rnn")])).unwrap_err();
        assert!(matches!(e, CliError::Usage(_)));
        let e = RunConfig::resolve(None, &ov(&[("trian.epochs", "3")])).unwrap_err();
        assert!(matches!(e, CliError::Usage(_)));
    }

    #[test]
    fn default_paths_live_in_the_output_directory() {
        let p = Paths::default();
        assert_eq!(p.train_data(), PathBuf::from("run/train.csv"));
        assert_eq!(p.checkpoint(), PathBuf::from("run/model.json"));
    }
}
