use std::path::Path;
use std::process::{Command, Output};

use dqlm_cli::output::{read_rows, FitRow, ForecastRow, Manifest, SeriesRow};

fn dqlm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dqlm")).args(args).current_dir(cwd).output().expect("spawn dqlm")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_series(dir: &Path, n: usize) {
    let mut text = String::from("t,y\n");
    for t in 1..=n {
        let y = 10.0 + 0.3 * (t as f64 * 1.7).sin() + 0.05 * t as f64;
        text.push_str(&format!("{t},{y}\n"));
    }
    std::fs::write(dir.join("y.csv"), text).unwrap();
}

#[test]
fn local_level_fit_writes_every_table() {
    let tmp = tempfile::tempdir().unwrap();
    write_series(tmp.path(), 20);
    let out = dqlm(&["fit", "--input", "y.csv", "--quantiles", "0.25,0.75", "--horizon", "3", "--out", "run"], tmp.path());
    ok(&out);
    let run = tmp.path().join("run");
    for f in ["fit_tau_0.25.csv", "fit_tau_0.75.csv", "logpred_tau_0.25.csv", "iqr.csv", "forecast.csv", "fit_state.json", "manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let fit: Vec<FitRow> = read_rows(&run.join("fit_tau_0.25.csv")).unwrap();
    assert_eq!(fit.len(), 20);
    assert!(fit.iter().all(|r| r.lower <= r.mean && r.mean <= r.upper));
    let fc: Vec<ForecastRow> = read_rows(&run.join("forecast.csv")).unwrap();
    assert_eq!(fc.len(), 6);
    assert_eq!(fc[0].t, 21);
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.fits.len(), 2);
    assert!(m.files.iter().any(|f| f == "forecast.csv"));
}

#[test]
fn bad_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    write_series(tmp.path(), 10);
    std::fs::write(tmp.path().join("c.toml"), "quantiles = [0.9, 0.1]\n").unwrap();
    let out = dqlm(&["fit", "-c", "c.toml", "--input", "y.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(tmp.path().join("c.toml"), "[model]\nno_such_key = 1\n").unwrap();
    assert_eq!(dqlm(&["fit", "-c", "c.toml", "--input", "y.csv"], tmp.path()).status.code(), Some(2));
    assert_eq!(dqlm(&["fit", "--input", "missing.csv"], tmp.path()).status.code(), Some(2));
}

#[test]
fn malformed_input_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("y.csv"), "t,y\n1,1\n2,x\n").unwrap();
    let out = dqlm(&["fit", "--input", "y.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn zero_horizon_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write_series(tmp.path(), 12);
    ok(&dqlm(&["fit", "--input", "y.csv", "--out", "run"], tmp.path()));
    assert_eq!(dqlm(&["forecast", "run", "--horizon", "0"], tmp.path()).status.code(), Some(2));
}

#[test]
fn mcmc_forecast_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    write_series(tmp.path(), 15);
    let args = ["fit", "--input", "y.csv", "--engine", "mcmc", "--sweeps", "200", "--burn-in", "50", "--thin", "1", "--seed", "9"];
    ok(&dqlm(&[&args[..], &["--out", "a"]].concat(), tmp.path()));
    ok(&dqlm(&[&args[..], &["--out", "b"]].concat(), tmp.path()));
    let a = std::fs::read_to_string(tmp.path().join("a/fit_tau_0.5.csv")).unwrap();
    let b = std::fs::read_to_string(tmp.path().join("b/fit_tau_0.5.csv")).unwrap();
    assert_eq!(a, b);
    ok(&dqlm(&["forecast", "a", "--horizon", "4", "--out", "f1"], tmp.path()));
    ok(&dqlm(&["forecast", "a", "--horizon", "4", "--out", "f2"], tmp.path()));
    let f1 = std::fs::read_to_string(tmp.path().join("f1/forecast.csv")).unwrap();
    assert_eq!(f1, std::fs::read_to_string(tmp.path().join("f2/forecast.csv")).unwrap());
    assert_eq!(f1.lines().count(), 5);
}

#[test]
fn log_fit_reports_on_the_data_scale() {
    let tmp = tempfile::tempdir().unwrap();
    write_series(tmp.path(), 20);
    ok(&dqlm(&["fit", "--input", "y.csv", "--log", "--out", "run"], tmp.path()));
    let fit: Vec<FitRow> = read_rows(&tmp.path().join("run/fit_tau_0.5.csv")).unwrap();
    // Log-scale values would sit near 2.3.
    assert!(fit[19].mean > 8.0 && fit[19].mean < 13.0, "{}", fit[19].mean);
    std::fs::write(tmp.path().join("neg.csv"), "t,y\n1,1\n2,-1\n").unwrap();
    assert_eq!(dqlm(&["fit", "--input", "neg.csv", "--log"], tmp.path()).status.code(), Some(2));
}

#[test]
fn simulate_writes_truth() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&dqlm(&["simulate", "level-shift", "--length", "40", "--seed", "3", "--out", "s"], tmp.path()));
    let rows: Vec<SeriesRow> = read_rows(&tmp.path().join("s/series.csv")).unwrap();
    assert_eq!(rows.len(), 40);
    // The drop of 250 happens at t = 28.
    assert!(rows[26].truth - rows[27].truth > 150.0);
}

#[test]
fn example_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("dqlm.example.toml");
    let cfg = dqlm_cli::config::RunConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.forecast.horizon, 12);
}
