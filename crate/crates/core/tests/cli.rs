use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 7
[model]
depth = 6
[simulate]
exact_n = 200
n = 50
paths = 500
trace_n = 40
[psi]
pathwise_n = 50
pathwise_paths = 200
[laplace]
exact_ns = [100, 200, 400]
mc_ns = [10, 50]
paths = 1000
[transforms]
fuzz_cases = 500
n_max = 40
paths = 500
[qv]
ns = [50, 100]
paths = 500
occupation_n = 100
burn_in = 10
occupation_paths = 200
[bounds]
azuma_ns = [50]
azuma_eps = [0.5]
paths = 500
cesaro_ns = [100]
cesaro_ms = [1]
control_ns = [50]
punctual_rs = [1, 3]
punctual_ks = [5]
"#;

fn hyperwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperwalk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn report_on_empty_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyperwalk(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unnormalized_measure_is_rejected_with_its_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[measure]\npreset = \"custom\"\natoms = [{ element = \"a\", p = 0.5 }, { element = \"b\", p = 0.3 }]\n",
    );
    let out = hyperwalk(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("measure.atoms"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[laplace]\nlambda_step = 0.1\n");
    let out = hyperwalk(&["--config", &cfg, "laplace"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_preset_is_rejected() {
    let out = hyperwalk(&["--preset", "skewed", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn small_run_writes_every_output_and_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = hyperwalk(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "run"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(matches!(out.status.code(), Some(0) | Some(1)), "{stdout}");
    for f in [
        "report.json",
        "timing.json",
        "summary.txt",
        "config.toml",
        "laplace.csv",
        "laplace_mc.csv",
        "rate.csv",
        "psi.csv",
        "trace.csv",
        "trajectory.csv",
    ] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["stages"].as_array().unwrap().len(), 8);
    let again = hyperwalk(&["report", out_dir.to_str().unwrap()]);
    assert_eq!(again.status.code(), out.status.code());
    assert!(out_dir.join("laplace.dat").exists());
}

#[test]
fn report_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut reports = Vec::new();
    for w in ["1", "3"] {
        let o = dir.path().join(format!("w{w}"));
        hyperwalk(&["--config", &cfg, "--workers", w, "--out", o.to_str().unwrap(), "laplace"]);
        reports.push(fs::read(o.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn seed_flag_changes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut reports = Vec::new();
    for s in ["1", "2"] {
        let o = dir.path().join(format!("s{s}"));
        hyperwalk(&["--config", &cfg, "--seed", s, "--out", o.to_str().unwrap(), "simulate"]);
        reports.push(fs::read_to_string(o.join("report.json")).unwrap());
    }
    assert_ne!(reports[0], reports[1]);
}
