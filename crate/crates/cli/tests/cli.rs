use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stablefield"));
    c.env_remove("STABLEFIELD_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("{}", String::from_utf8_lossy(&out.stderr)))
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn empty_config_lists_missing_fields() {
    let out = run(&["validate"]);
    assert_eq!(out.status.code(), Some(2));
    let rec = stderr_json(&out);
    let fields: Vec<&str> = rec["diagnostics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["field"].as_str().unwrap())
        .collect();
    assert_eq!(fields, ["kind", "alpha", "n_components", "horizon", "seed", "output_dir"]);
}

#[test]
fn gaussian_jump_resolved_is_rejected() {
    let out = run(&[
        "validate",
        "--set", "kind=simulate",
        "--set", "alpha=2.0",
        "--set", "n_components=4",
        "--set", "horizon=1.0",
        "--set", "grid_step=0.1",
        "--set", "mode=jump-resolved",
        "--seed", "1",
        "--out", "unused",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no jump part"));
}

#[test]
fn epsilon_bound_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = \"oscillation\"\nalpha = 1.0\nn_components = 10\nhorizon = 1.0\nseed = 1\nr1 = 0.5\nwindow = 0.01\nepsilon = 0.5\n",
    );
    let out = run(&["oscillation", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let rec = stderr_json(&out);
    let msg = rec["diagnostics"][0]["message"].as_str().unwrap();
    assert_eq!(rec["diagnostics"][0]["field"], "epsilon");
    assert!(msg.contains("strict"), "{msg}");
    assert!(run(&["validate", "--config", &cfg, "--set", "epsilon=0.4", "--out", "x"]).status.success());
}

#[test]
fn simulate_is_byte_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let bytes: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let out = run(&[
                "simulate",
                "--set", "alpha=1.5",
                "--set", "n_components=1",
                "--set", "horizon=2.0",
                "--set", "grid_step=0.01",
                "--set", "mode=marginal-exact",
                "--seed", "42",
                "--out", d.path().to_str().unwrap(),
            ]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            assert!(d.path().join("coefficients.manifest.json").exists());
            assert!(d.path().join("jumps.manifest.json").exists());
            fs::read(d.path().join("coefficients.csv")).unwrap()
        })
        .collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(String::from_utf8_lossy(&bytes[0]).lines().count(), 202);
}

#[test]
fn manifest_alone_reruns_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--set", "alpha=0.8",
        "--set", "n_components=5",
        "--set", "horizon=1.0",
        "--set", "grid_step=0.05",
        "--seed", "9",
        "--workers", "3",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let first = fs::read(dir.path().join("jumps.csv")).unwrap();
    let other = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("jumps.manifest.json");
    let out = run(&[
        "simulate",
        "--from-manifest", manifest.to_str().unwrap(),
        "--out", other.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(first, fs::read(other.path().join("jumps.csv")).unwrap());
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("STABLEFIELD_OUT", dir.path())
        .args([
            "jump-density",
            "--set", "alpha=1.0",
            "--set", "n_components=5",
            "--set", "horizon=1.0",
            "--set", "r1=1.0",
            "--seed", "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("coverage.csv").exists());
}

#[test]
fn resource_cap_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--set", "alpha=1.0",
        "--set", "n_components=10000",
        "--set", "horizon=1.0",
        "--set", "grid_step=0.001",
        "--set", "cell_cap=1000000",
        "--seed", "1",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["category"], "resource-cap");
}

#[test]
fn jump_density_prediction_contains_coverage_formula() {
    let dir = tempfile::tempdir().unwrap();
    let rate = std::f64::consts::LN_2.to_string();
    let out = run(&[
        "jump-density",
        "--set", "alpha=1.0",
        "--set", "n_components=20",
        "--set", "horizon=1.0",
        "--set", "coverage_width=1.0",
        "--set", &format!("jump_rate={rate}"),
        "--seed", "5",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("coverage.csv"));
    // Each of 20 components misses (0, 1) with probability exactly 1/2.
    let expected = 1.0 - 0.5f64.powi(20);
    assert!(rows.iter().any(|r| (r[4].parse::<f64>().unwrap() - expected).abs() < 1e-15));
}

#[test]
fn threshold_scan_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "threshold-scan",
        "--set", "alpha=1.0",
        "--set", "n_components=1000",
        "--set", "horizon=1.0",
        "--set", "replicas=1000",
        "--set", "deltas=[0.5, 1.5]",
        "--seed", "17",
        "--workers", "2",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("threshold_slopes.csv"));
    assert_eq!(rows.len(), 2);
    for (row, (delta, drift)) in rows.iter().zip([(0.5, "plateau"), (1.5, "growth")]) {
        let slope: f64 = row[3].parse().unwrap();
        // Stationary scale of X^j is (alpha j^2)^(-1/alpha): slope 2 delta - 4 at alpha = 1.
        let expected = 2.0 * delta - 4.0;
        assert_eq!(row[0].parse::<f64>().unwrap(), delta);
        assert!((slope - expected).abs() <= 0.2, "delta {delta}: {slope}");
        assert_eq!(&row[7], drift);
    }
}

#[test]
fn presets_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let out = run(&["validate", "--config", path.to_str().unwrap(), "--out", "unused"]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        seen += 1;
    }
    assert_eq!(seen, 7);
}
