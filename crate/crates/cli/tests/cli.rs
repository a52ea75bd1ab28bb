use std::path::Path;
use std::process::{Command, Output};

fn kawasaki(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kawasaki"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const SIMULATE: &str = r#"
[model]
dim = 1
side = 64

[field]
mode = "constant"
constant = [1.0]

[run]
horizon = 0.02
trajectories = 6
seed = 3
observations = 2
profile = [[1, 0.0, 0.25]]

[numerics]
grid = 16
"#;

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIMULATE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = kawasaki(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(json(&o)["result"]["conserved"], true);
    }
    let text = std::fs::read_to_string(a.join("density_mean.csv")).unwrap();
    assert!(text == std::fs::read_to_string(b.join("density_mean.csv")).unwrap());
    assert!(text.lines().next().unwrap().starts_with("# kawasaki "));
    assert!(text.lines().nth(2).unwrap().starts_with("# config_hash "));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["meta"]["command"], "simulate");
}

#[test]
fn seed_override_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIMULATE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    kawasaki(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    kawasaki(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "99"]);
    assert!(std::fs::read(a.join("density_mean.csv")).unwrap() != std::fs::read(b.join("density_mean.csv")).unwrap());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\ndim = 1\nside = 64\n[run]\ntrajectories = 0\n");
    let o = kawasaki(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.trajectories"));

    let cfg = write_config(dir.path(), "[model]\ndim = 1\nside = 8\nunknown_key = 1\n");
    let o = kawasaki(&["thermo", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_guard_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\ndim = 1\nside = 64\n[run]\nhorizon = 0.01\nprofile = [[1, 0.0, 0.2]]\n[numerics]\ngrid = 64\ndt = 0.01\n",
    );
    let o = kawasaki(&["ratefn", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exact_stationary_reports_the_gradient_case() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\ndim = 1\nside = 6\n[field]\nmode = \"constant\"\nconstant = [2.0]\n[run]\nparticles = 3\n",
    );
    let o = kawasaki(&["exact-stationary", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["result"]["class"], "gradient");
    assert!(v["result"]["deviation"].as_f64().unwrap() <= 1e-10);
    assert!(dir.path().join("stationary.csv").exists());
}

#[test]
fn check_passes_and_mutation_fails() {
    let o = kawasaki(&["check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["passed"], true);

    let o = kawasaki(&["check", "--corrupt-rates"]);
    assert_eq!(o.status.code(), Some(3));
    let v = json(&o);
    let failed: Vec<&str> = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, vec!["detailed balance"]);
}

#[test]
fn coefficient_subcommands_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\ndim = 1\nside = 8\ncoupling = 0.3\n[numerics]\npoints = 11\n");
    let out = dir.path().to_str().unwrap();
    assert!(kawasaki(&["thermo", "--config", &cfg, "--out", out]).status.success());
    assert!(kawasaki(&["mobility", "--config", &cfg, "--out", out]).status.success());
    for f in ["thermo.csv", "thermo.json", "mobility.csv", "coefficients.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
