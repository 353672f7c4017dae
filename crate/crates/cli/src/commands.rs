use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use rkbilinear::baselines::AnalogForecaster;
use rkbilinear::checkpoint::{from_json_str, to_json_string, Model};
use rkbilinear::dynamics::{generate_dataset, DatasetSpec, SystemKind, Trajectory, VectorField};
use rkbilinear::evaluation::{
    format_forecast_table, parameter_mse, rmse_at_horizons, write_forecast_csv, Forecaster, TruthReplay,
};
use rkbilinear::latent::run_latent_experiment;
use rkbilinear::models::{as_forecaster, fit_model, identified_polynomial, init_model, Fitted, ModelKind};
use rkbilinear::training::{gradcheck_report, make_pairs, PairDataset, TrainHistory};
use rkbilinear::SeededRng;

use crate::config::RunConfig;
use crate::error::{io_error, CliError, CliResult, Context};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
/// Absolute errors below this are finite-difference noise on an O(1) loss,
/// so a check whose every entry stays under it passes regardless of the
/// relative error of near-zero gradients.
pub const GRADCHECK_NOISE_FLOOR: f64 = 1e-9;

/// Provenance record written next to each command's outputs. The timestamp
/// is the only field that differs between reruns.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    created_unix_seconds: u64,
    outputs: Vec<String>,
    details: toml::Table,
    config: &'a RunConfig,
}

fn write_manifest(cfg: &RunConfig, command: &str, outputs: &[PathBuf], details: toml::Table) -> CliResult<PathBuf> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        created_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        details,
        config: cfg,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Failed(format!("manifest: {e}")))?;
    let path = cfg.paths.out_dir.join(format!("manifest-{command}.toml"));
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    fs::write(path, bytes).map_err(io_error(path))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(io_error(path))
}

fn read_trajectory(path: &Path) -> CliResult<Trajectory> {
    let text = read_text(path)?;
    Trajectory::read_csv(text.as_bytes()).context(path.display().to_string())
}

fn trajectory_bytes(traj: &Trajectory) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).context("writing trajectory")?;
    Ok(buf)
}

fn table_of<T: Serialize>(value: &T) -> toml::Table {
    match toml::Value::try_from(value) {
        Ok(toml::Value::Table(t)) => t,
        _ => toml::Table::new(),
    }
}

fn check_dim(what: &str, found: usize, expected: usize) -> CliResult<()> {
    if found == expected {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{what} has dimension {found}, expected {expected}")))
    }
}

pub fn generate(cfg: &RunConfig) -> CliResult<()> {
    let spec = cfg.dataset_spec()?;
    let (train, test) = generate_dataset(&spec).context("data generation")?;
    let (train_path, test_path) = (cfg.paths.train_data(), cfg.paths.test_data());
    write_file(&train_path, &trajectory_bytes(&train)?)?;
    write_file(&test_path, &trajectory_bytes(&test)?)?;

    #[derive(Serialize)]
    struct Details<'a> {
        initial_condition: Vec<f64>,
        dataset: &'a DatasetSpec,
    }
    let details = table_of(&Details {
        initial_condition: spec.initial_condition().iter().copied().collect(),
        dataset: &spec,
    });
    let manifest = write_manifest(cfg, "generate", &[train_path.clone(), test_path.clone()], details)?;
    println!(
        "{}: {} train states -> {}, {} test states -> {}, h = {}",
        spec.system.kind(),
        train.len(),
        train_path.display(),
        test.len(),
        test_path.display(),
        spec.h
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

fn write_history(path: &Path, history: &TrainHistory) -> CliResult<()> {
    let mut buf = Vec::new();
    history.write_csv(&mut buf).context("writing training log")?;
    write_file(path, &buf)
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let kind = cfg.model_kind()?;
    if kind == ModelKind::Af {
        return Err(CliError::Usage(
            "af is instance-based and has no training phase; run `evaluate --model af` with the training data".into(),
        ));
    }
    let system = cfg.ode_system()?;
    let series = read_trajectory(&cfg.paths.train_data())?;
    check_dim("training data", series.dim(), system.dim())?;
    let fitted = fit_model(kind, &cfg.architecture, &system, &series, &cfg.train).context("training")?;
    let Fitted::Model { model, history } = fitted else {
        unreachable!("only analog forecasting yields an instance-based model");
    };

    let checkpoint = cfg.paths.checkpoint();
    write_file(&checkpoint, to_json_string(&model).context("checkpoint")?.as_bytes())?;
    let mut outputs = vec![checkpoint.clone()];
    let mut details = toml::Table::new();
    details.insert("checkpoint_kind".into(), model.kind().into());
    details.insert("num_params".into(), (model.num_params() as i64).into());
    match &history {
        Some(history) => {
            let log = cfg.paths.out_dir.join("train_log.csv");
            write_history(&log, history)?;
            outputs.push(log);
            let last = history.last();
            let best = history.best_record();
            println!(
                "{kind}: final train RMSE {:.6e}, validation RMSE {:.6e}; kept epoch {} (validation RMSE {:.6e})",
                last.train_mse.sqrt(),
                last.val_mse.sqrt(),
                best.epoch,
                best.val_mse.sqrt()
            );
        }
        None => {
            let active = match &model {
                Model::Sparse(m) => m.xi.as_slice().iter().filter(|c| **c != 0.0).count(),
                _ => model.num_params(),
            };
            println!("{kind}: fitted in one pass, {active} active terms");
        }
    }
    let manifest = write_manifest(cfg, "train", &outputs, details)?;
    println!("checkpoint: {}", checkpoint.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

fn model_label(model: &Model) -> String {
    match model {
        Model::Binn(m) => format!("binn{}", m.n_blocks),
        other => other.kind().to_string(),
    }
}

/// `oracle` replaces the model with a replay of the test series, which must
/// score exactly zero.
pub fn evaluate(cfg: &RunConfig, oracle: bool) -> CliResult<()> {
    let system = cfg.ode_system()?;
    let test = read_trajectory(&cfg.paths.test_data())?;
    check_dim("test data", test.dim(), system.dim())?;
    let mut model = None;
    let (label, forecaster): (String, Box<dyn Forecaster>) = if oracle {
        ("truth".into(), Box::new(TruthReplay::new(&test)))
    } else if cfg.model_kind()? == ModelKind::Af {
        let series = read_trajectory(&cfg.paths.train_data())?;
        check_dim("training data", series.dim(), system.dim())?;
        let pairs = make_pairs(&series).context("pairs")?;
        let af = AnalogForecaster::new(pairs, cfg.architecture.analog).context("analog forecaster")?;
        ("af".into(), Box::new(af))
    } else {
        let path = cfg.paths.checkpoint();
        let loaded = from_json_str(&read_text(&path)?).context(path.display().to_string())?;
        let f = as_forecaster(&loaded, test.h());
        let label = model_label(&loaded);
        model = Some(loaded);
        (label, f)
    };
    check_dim("model", forecaster.state_dim(), test.dim())?;

    let report = rmse_at_horizons(&label, &*forecaster, &test, &cfg.horizons).context("evaluation")?;
    let mut csv = Vec::new();
    write_forecast_csv(&mut csv, std::slice::from_ref(&report)).context("report")?;
    let forecast_path = cfg.paths.out_dir.join("forecast.csv");
    write_file(&forecast_path, &csv)?;
    let mut outputs = vec![forecast_path];
    print!("{}", format_forecast_table(std::slice::from_ref(&report)));
    if report.total_diverged() > 0 {
        eprintln!(
            "warning: {} of {} rollouts diverged before the longest horizon",
            report.total_diverged(),
            report.n_initial_conditions
        );
    }

    let mut details = toml::Table::new();
    details.insert("model".into(), label.clone().into());
    if let (Some(model), SystemKind::Lorenz63) = (&model, system.kind()) {
        if let Some(poly) = identified_polynomial(model) {
            let poly = poly.context("polynomial expansion")?;
            let ident = parameter_mse(&poly, &system).context("parameter identification")?;
            let mut buf = Vec::new();
            ident.write_csv(&mut buf).context("identification report")?;
            let path = cfg.paths.out_dir.join("identification.csv");
            write_file(&path, &buf)?;
            outputs.push(path);
            print!("{}", ident.format_table(&label));
            details.insert("parameter_mse".into(), ident.mse.into());
        }
    }
    let manifest = write_manifest(cfg, "evaluate", &outputs, details)?;
    println!("manifest: {}", manifest.display());
    Ok(())
}

pub fn latent(cfg: &RunConfig) -> CliResult<()> {
    let outcome = run_latent_experiment(&cfg.latent).context("latent experiment")?;
    let dir = &cfg.paths.out_dir;
    let truth_path = dir.join("latent_truth.csv");
    let aligned_path = dir.join("latent_aligned.csv");
    let model_path = dir.join("latent_model.json");
    let log_path = dir.join("latent_log.csv");
    let report_path = dir.join("latent_report.txt");
    write_file(&truth_path, &trajectory_bytes(&outcome.test_truth)?)?;
    let aligned = Trajectory::new(outcome.test_truth.t0(), outcome.test_truth.h(), outcome.aligned.clone())
        .context("aligned series")?;
    write_file(&aligned_path, &trajectory_bytes(&aligned)?)?;
    let model = Model::Latent(outcome.model.clone());
    write_file(&model_path, to_json_string(&model).context("checkpoint")?.as_bytes())?;
    write_history(&log_path, &outcome.history)?;
    let summary = outcome.summary();
    write_file(&report_path, format!("{summary}\n").as_bytes())?;

    let mut details = toml::Table::new();
    details.insert("residual_rmse".into(), outcome.alignment.residual_rmse.into());
    details.insert("relative_residual".into(), outcome.relative_residual().into());
    details.insert("test_rmse".into(), outcome.test_rmse.into());
    let outputs = [truth_path, aligned_path, model_path, log_path, report_path];
    let manifest = write_manifest(cfg, "latent", &outputs, details)?;
    println!("{summary}");
    println!("manifest: {}", manifest.display());
    Ok(())
}

/// Checks backpropagated gradients against finite differences, either for
/// a freshly initialized model of the configured kind or for the stored
/// checkpoint. Sample pairs come from a short series of the configured
/// system, or are drawn uniformly when the model dimension differs.
pub fn gradcheck(cfg: &RunConfig, from_checkpoint: bool, n_samples: usize) -> CliResult<()> {
    let spec = DatasetSpec {
        n_train: 200,
        n_test: 2,
        spinup: 100,
        ..cfg.dataset_spec()?
    };
    let (series, _) = generate_dataset(&spec).context("data generation")?;
    let model = if from_checkpoint {
        let path = cfg.paths.checkpoint();
        from_json_str(&read_text(&path)?).context(path.display().to_string())?
    } else {
        let kind = cfg.model_kind()?;
        init_model(kind, &cfg.architecture, &spec.system, &series, cfg.seed)
            .context("initialization")?
            .ok_or_else(|| CliError::Usage(format!("{kind} has no trainable parameters")))?
    };
    let n_samples = n_samples.clamp(1, series.len() - 1);
    let sample = if model.state_dim() == series.dim() {
        let states = series.states();
        let stride = (states.len() - 1) / n_samples;
        let idx: Vec<usize> = (0..n_samples).map(|i| i * stride).collect();
        PairDataset::new(
            idx.iter().map(|&i| states[i].clone()).collect(),
            idx.iter().map(|&i| states[i + 1].clone()).collect(),
            series.h(),
        )
    } else {
        let d = model.state_dim();
        let mut rng = SeededRng::new(cfg.seed).derive("gradcheck");
        let mut draw = || (0..n_samples).map(|_| (0..d).map(|_| rng.uniform(-1.5, 1.5)).collect()).collect();
        let inputs = draw();
        PairDataset::new(inputs, draw(), series.h())
    }
    .context("sample")?;
    let report = match &model {
        Model::Binn(m) => gradcheck_report(m, &sample),
        Model::Mlp(m) => gradcheck_report(m, &sample),
        Model::MlpSl4(m) => gradcheck_report(m, &sample),
        Model::Latent(m) => gradcheck_report(m, &sample),
        Model::Sparse(_) => return Err(CliError::Usage("sparse models are fitted without gradients".into())),
    }
    .context("gradient check")?;
    println!(
        "{}: {} parameters, max relative error {:.3e}, max absolute error {:.3e}",
        model_label(&model),
        report.n_params,
        report.max_rel_error,
        report.max_abs_error
    );
    if report.max_rel_error < GRADCHECK_TOLERANCE || report.max_abs_error < GRADCHECK_NOISE_FLOOR {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradient check failed: {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}
