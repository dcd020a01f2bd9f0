use std::path::Path;
use std::process::{Command, Output};

fn ismra(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ismra"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

const CONFIG: &str = "seed = 3\nsim_grid = 7\ncontinuous = [\"elevation\"]\n\
                      categorical = [\"landcover:forest\", \"day:0\"]\nm0 = 8\nn_is = 12\nmax_iter = 6\n";

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn help_exits_zero() {
    let dir = workspace();
    assert_eq!(ismra(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn missing_training_file_is_a_config_error() {
    let dir = workspace();
    let out = ismra(&["fit", "--config", "cfg.toml", "--out-dir", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--train"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = workspace();
    std::fs::write(dir.path().join("bad.toml"), "n_knots = 4\n").unwrap();
    let out = ismra(&["simulate", "--config", "bad.toml", "--out-dir", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unparseable_flag_is_a_config_error() {
    let dir = workspace();
    let out = ismra(&["simulate", "--seed", "abc"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_rows_are_data_errors_naming_the_line() {
    let dir = workspace();
    std::fs::write(
        dir.path().join("train.csv"),
        "lon,lat,date,y,elevation,landcover,day\n73.3,18.7,2012-05-26,1.0,400,forest,0\n73.3,north,2012-05-26,1.0,400,forest,0\n",
    )
    .unwrap();
    let out = ismra(&["fit", "--config", "cfg.toml", "--train", "train.csv", "--out-dir", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("3"));
}

#[test]
fn simulate_fit_and_score() {
    let dir = workspace();
    let p = dir.path();
    assert!(ismra(&["simulate", "--config", "cfg.toml", "--out-dir", "sim"], p).status.success());
    let test_rows = std::fs::read_to_string(p.join("sim/test.csv")).unwrap().lines().count() - 1;
    assert!(test_rows > 0);

    let fit = ismra(
        &["fit", "--config", "cfg.toml", "--train", "sim/train.csv", "--predict-at", "sim/test.csv", "--out-dir", "fit"],
        p,
    );
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let preds = std::fs::read_to_string(p.join("fit/predictions.csv")).unwrap();
    let mut lines = preds.lines();
    assert_eq!(lines.next(), Some("lon,lat,time,mean,sd,ci_low,ci_high,method"));
    assert_eq!(lines.count(), test_rows);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("fit/manifest.json")).unwrap()).unwrap();
    assert!(manifest.is_object());

    let metrics = ismra(&["metrics", "--truth", "sim/test.csv", "--predictions", "fit/predictions.csv"], p);
    assert!(metrics.status.success());
    let text = String::from_utf8(metrics.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0] as usize, test_rows);
    assert!(row[1] > 0.0 && (0.0..=1.0).contains(&row[3]));
}

#[test]
fn metrics_rejects_length_mismatch() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(p.join("pred.csv"), "mean,ci_low,ci_high\n1,0,2\n2,1,3\n").unwrap();
    std::fs::write(p.join("truth.csv"), "y\n1.5\n").unwrap();
    let out = ismra(&["metrics", "--truth", "truth.csv", "--predictions", "pred.csv"], p);
    assert_eq!(out.status.code(), Some(3));
}
