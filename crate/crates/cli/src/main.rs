//! `rkbilinear`: generate data, train, evaluate and run latent experiments.
//!
//! Every subcommand reads an optional TOML run configuration, applies
//! `--set key=value` overrides and then the named flags, and writes its
//! outputs plus a `manifest-<command>.toml` into the output directory.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 I/O, 4 numerical
//! divergence.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_override, RunConfig};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "rkbilinear", version, about = "Learn ODE dynamics with Runge-Kutta shaped bilinear networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a reference system and write train/test CSVs.
    Generate(Common),
    /// Fit a model to the training series and write a checkpoint.
    Train(Common),
    /// Score multi-step forecasts on the test series.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Replay the test series instead of loading a model.
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Learn latent dynamics behind a linear observation map.
    Latent {
        #[command(flatten)]
        common: Common,
        /// Observe the latent state through an identity map padded with zeros.
        #[arg(long)]
        identity_observation: bool,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Check the stored checkpoint instead of a fresh initialization.
        #[arg(long)]
        from_checkpoint: bool,
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `train.learning_rate=3e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    set: Vec<(String, toml::Value)>,
    /// lorenz63, oregonator or lorenz96.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// binn1, binn4, mlp, mlp_sl4, sr or af.
    #[arg(long)]
    model: Option<String>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Worker threads for data-parallel stages.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self, extra: &[(&str, toml::Value)]) -> CliResult<RunConfig> {
        let path = |p: &PathBuf| toml::Value::String(p.display().to_string());
        let mut overrides = self.set.clone();
        let mut flag = |key: &str, value: Option<toml::Value>| {
            if let Some(v) = value {
                overrides.push((key.to_string(), v));
            }
        };
        flag("system", self.system.clone().map(Into::into));
        flag("seed", self.seed.map(|s| seed_value(s)).transpose()?);
        flag("model", self.model.clone().map(Into::into));
        flag("paths.out_dir", self.out.as_ref().map(path));
        flag("paths.train_data", self.train_data.as_ref().map(path));
        flag("paths.test_data", self.test_data.as_ref().map(path));
        flag("paths.checkpoint", self.checkpoint.as_ref().map(path));
        flag("train.epochs", self.epochs.map(|e| (e as i64).into()));
        for (k, v) in extra {
            flag(k, Some(v.clone()));
        }
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }

    fn apply_threads(&self) -> CliResult<()> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
        }
        Ok(())
    }
}

fn seed_value(seed: u64) -> CliResult<toml::Value> {
    i64::try_from(seed)
        .map(Into::into)
        .map_err(|_| CliError::Usage(format!("seed {seed} does not fit a signed 64-bit integer")))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(common) => {
            common.apply_threads()?;
            commands::generate(&common.resolve(&[])?)
        }
        Command::Train(common) => {
            common.apply_threads()?;
            commands::train(&common.resolve(&[])?)
        }
        Command::Evaluate { common, oracle } => {
            common.apply_threads()?;
            commands::evaluate(&common.resolve(&[])?, oracle)
        }
        Command::Latent {
            common,
            identity_observation,
        } => {
            common.apply_threads()?;
            let extra: Vec<(&str, toml::Value)> = if identity_observation {
                vec![("latent.identity_observation", true.into())]
            } else {
                Vec::new()
            };
            commands::latent(&common.resolve(&extra)?)
        }
        Command::Gradcheck {
            common,
            from_checkpoint,
            samples,
        } => {
            common.apply_threads()?;
            commands::gradcheck(&common.resolve(&[])?, from_checkpoint, samples)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
