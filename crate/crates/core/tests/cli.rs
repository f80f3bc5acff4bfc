use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dslsim::harness::CSV_HEADER;

fn dslsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dslsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"
rounds = 6
num_workers = 8
[data]
n_samples = 2000
global_fraction = 0.05
[schedules]
s_final = 4
"#;

#[test]
fn run_writes_metrics_and_honours_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = dslsim(&["run", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 7);
    assert!(lines.all(|l| l.split(',').nth(2) == Some("9")));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 9"));
}

#[test]
fn config_errors_exit_2_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rounds = 5\n[channel]\nbogus = 1\n");
    let o = dslsim(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus") && err.contains("config.toml:3:"), "{err}");

    let cfg = write_config(dir.path(), "[failures]\nlink_drop_prob = 2.0\n");
    let o = dslsim(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failures.link_drop_prob"));
}

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = dslsim(&["validate", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn numeric_blowup_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}alpha = 1e300\nlambda_init = 0.0\nlambda_final = 0.0\n");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = dslsim(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_passes_for_both_models() {
    for model in ["linear", "mlp"] {
        let o = dslsim(&["gradcheck", "--model", model]);
        assert!(o.status.success(), "{model}: {}", String::from_utf8_lossy(&o.stdout));
    }
}

#[test]
fn sweep_writes_per_run_outputs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let overrides = dir.path().join("overrides.toml");
    fs::write(
        &overrides,
        "[[variant]]\nname = \"dsl\"\n\n[[variant]]\nname = \"fl\"\nalgorithm = \"fl\"\n",
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let o = dslsim(&[
        "sweep",
        "--config",
        &cfg,
        "--overrides",
        overrides.to_str().unwrap(),
        "--seeds",
        "1..2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for v in ["dsl", "fl"] {
        for s in [1, 2] {
            assert!(out.join(v).join(format!("seed_{s}")).join("metrics.csv").exists());
        }
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4 + 2);
    assert!(summary.contains("fl,median,"));
}

#[test]
fn bad_seed_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let overrides = dir.path().join("o.toml");
    fs::write(&overrides, "[[variant]]\nname = \"a\"\n").unwrap();
    let o = dslsim(&[
        "sweep",
        "--config",
        &cfg,
        "--overrides",
        overrides.to_str().unwrap(),
        "--seeds",
        "5..1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
