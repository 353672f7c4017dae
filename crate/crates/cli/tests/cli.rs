use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rkb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rkbilinear"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rkb(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: [&str; 6] = ["--set", "data.n_train=3000", "--set", "data.n_test=200", "--set", "data.spinup=200"];

fn generate_small(dir: &Path, out: &str, seed: &str) {
    let mut args = vec!["generate", "--system", "lorenz63", "--seed", seed, "--out", out];
    args.extend(SMALL);
    ok(dir, &args);
}

/// Drops the seconds column of a training log.
fn without_timing(log: &str) -> Vec<String> {
    log.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for out in ["a", "b"] {
        generate_small(dir, out, "42");
        ok(dir, &["train", "--out", out, "--seed", "42", "--epochs", "3"]);
        ok(dir, &["evaluate", "--out", out, "--seed", "42"]);
    }
    for file in ["train.csv", "test.csv", "model.json", "forecast.csv", "identification.csv"] {
        let a = fs::read(dir.join("a").join(file)).unwrap();
        let b = fs::read(dir.join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between reruns");
    }
    let log = |d: &str| without_timing(&fs::read_to_string(dir.join(d).join("train_log.csv")).unwrap());
    assert_eq!(log("a"), log("b"));
    assert_eq!(log("a")[0], "epoch,train_mse,val_mse");

    generate_small(dir, "c", "43");
    assert_ne!(fs::read(dir.join("a/train.csv")).unwrap(), fs::read(dir.join("c/train.csv")).unwrap());
}

#[test]
fn generate_writes_requested_sizes_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    generate_small(tmp.path(), "run", "1");
    let rows = |f: &str| fs::read_to_string(tmp.path().join("run").join(f)).unwrap().lines().count() - 1;
    assert_eq!(rows("train.csv"), 3000);
    assert_eq!(rows("test.csv"), 200);
    let manifest: toml::Table = fs::read_to_string(tmp.path().join("run/manifest-generate.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["config"]["seed"].as_integer(), Some(1));
    assert_eq!(manifest["details"]["dataset"]["spinup"].as_integer(), Some(200));
    assert!(manifest["details"]["dataset"]["integrator"]["rel_tol"].as_float().is_some());
    assert!(manifest.contains_key("created_unix_seconds"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "system = \"lorenz96\"\nseed = 5\n[data]\nn_train = 50\nn_test = 20\nspinup = 10\n",
    )
    .unwrap();
    ok(tmp.path(), &["generate", "--config", "run.toml", "--system", "lorenz63", "--out", "o"]);
    let header = fs::read_to_string(tmp.path().join("o/train.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 4);
    let manifest = fs::read_to_string(tmp.path().join("o/manifest-generate.toml")).unwrap();
    assert!(manifest.contains("system = \"lorenz63\""));
    assert!(manifest.contains("seed = 5"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rkb(tmp.path(), &["generate", "--system", "lorenz84"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("lorenz63") && msg.contains("oregonator") && msg.contains("lorenz96"), "{msg}");

    assert_eq!(rkb(tmp.path(), &["train", "--model", "rnn"]).status.code(), Some(2));
    assert_eq!(rkb(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(rkb(tmp.path(), &["train", "--train-data", "missing.csv"]).status.code(), Some(3));
    assert_eq!(rkb(tmp.path(), &["evaluate", "--out", "nowhere"]).status.code(), Some(3));

    fs::write(tmp.path().join("blocker"), "").unwrap();
    let out = rkb(tmp.path(), &["generate", "--out", "blocker/sub", "--set", "data.n_train=10", "--set", "data.n_test=10"]);
    assert_eq!(out.status.code(), Some(3));

    // A diverging integration: huge forcing, loose budget.
    let out = rkb(
        tmp.path(),
        &[
            "generate",
            "--system",
            "lorenz63",
            "--out",
            "d",
            "--set",
            "data.h=1e6",
            "--set",
            "data.integrator.max_substeps=50",
        ],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn dimension_mismatch_stops_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    generate_small(tmp.path(), "run", "0");
    let out = rkb(tmp.path(), &["train", "--out", "run", "--system", "lorenz96"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
    assert!(!tmp.path().join("run/model.json").exists());
}

#[test]
fn oracle_scores_zero_and_table_lists_horizons_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    generate_small(tmp.path(), "run", "0");
    let stdout = ok(tmp.path(), &["evaluate", "--out", "run", "--oracle"]);
    let header = stdout.lines().next().unwrap();
    let cols: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(&cols[1..4], &["h", "4h", "8h"]);
    let csv = fs::read_to_string(tmp.path().join("run/forecast.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let rmse: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(rmse, 0.0, "{line}");
    }
}

#[test]
fn sparse_and_analog_models_skip_gradient_training() {
    let tmp = tempfile::tempdir().unwrap();
    generate_small(tmp.path(), "run", "0");
    let stdout = ok(tmp.path(), &["train", "--out", "run", "--model", "sr"]);
    assert!(stdout.contains("one pass"));
    assert!(!tmp.path().join("run/train_log.csv").exists());
    let model = fs::read_to_string(tmp.path().join("run/model.json")).unwrap();
    assert!(model.contains("\"kind\": \"sparse\""));
    ok(tmp.path(), &["evaluate", "--out", "run"]);
    let ident = fs::read_to_string(tmp.path().join("run/identification.csv")).unwrap();
    assert!(ident.lines().count() > 1);

    assert_eq!(rkb(tmp.path(), &["train", "--out", "run", "--model", "af"]).status.code(), Some(2));
    let stdout = ok(tmp.path(), &["evaluate", "--out", "run", "--model", "af"]);
    assert!(stdout.contains("af"));
}

#[test]
fn gradcheck_passes_for_trainable_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    for model in ["binn1", "binn4", "mlp", "mlp_sl4"] {
        ok(tmp.path(), &["gradcheck", "--model", model, "--threads", "1"]);
    }
    assert_eq!(rkb(tmp.path(), &["gradcheck", "--model", "af"]).status.code(), Some(2));
}

#[test]
fn latent_identity_observation_passes_the_state_through() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "latent",
        "--out",
        "lat",
        "--identity-observation",
        "--set",
        "latent.n_train=2000",
        "--set",
        "latent.n_test=100",
        "--set",
        "latent.train.epochs=3",
    ];
    let stdout = ok(tmp.path(), &args);
    assert!(stdout.contains("alignment residual"));
    for f in ["latent_truth.csv", "latent_aligned.csv", "latent_model.json", "latent_log.csv", "latent_report.txt"] {
        assert!(tmp.path().join("lat").join(f).exists(), "{f}");
    }
    let truth = fs::read_to_string(tmp.path().join("lat/latent_truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 101);

    let mut again: Vec<&str> = args.to_vec();
    again[2] = "lat2";
    ok(tmp.path(), &again);
    for f in ["latent_aligned.csv", "latent_report.txt", "latent_model.json"] {
        assert_eq!(
            fs::read(tmp.path().join("lat").join(f)).unwrap(),
            fs::read(tmp.path().join("lat2").join(f)).unwrap(),
            "{f}"
        );
    }
}
