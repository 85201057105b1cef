//! End-to-end runs of the `tumble` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tumble::RunConfig;

const WALK: &str = "\
[model]
kind = lattice
lambda = 2
kappa = 1
gamma = 4

[grids]
alpha = -2:2:9
x = -3:3:13
q = 0, 0.5, 2.8
z = 0.5, 2+1i
epsilon = 0.2, 0.1
gamma = 1, 10

[simulation]
horizon = 20
replicas = 2000
seed = 7
scgf_alpha = 0.25
";

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("run.ini");
    std::fs::write(&path, text).unwrap();
    path
}

fn tumble(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tumble"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn analyze_walk_and_continuum() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("walk");
    let run = tumble(&write_config(&dir, WALK), &out, &["analyze"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let d = json(out.join("diffusion.json"));
    assert!((f(&d["sigma2"]) - 5.0).abs() < 1e-12);
    assert!((f(&d["sigma2_curvature"]) - 5.0).abs() < 1e-6);

    let mut csv = csv::Reader::from_path(out.join("fourier_laplace.csv")).unwrap();
    let mut rows = 0;
    for r in csv.records() {
        let r = r.unwrap();
        let num = |i: usize| r[i].parse::<f64>().unwrap();
        assert!(num(5) < 1e-10, "residual {}", &r[5]);
        if num(0) == 0.0 {
            let z = tumble_core::Complex::new(num(1), num(2));
            let s = tumble_core::Complex::new(num(3), num(4));
            assert!((s - z.inv()).norm() < 1e-12);
        }
        rows += 1;
    }
    assert_eq!(rows, 6);
    assert!(out.join("scaling_diagnostic.csv").exists());

    let out = dir.path().join("continuum");
    let run = tumble(&configs().join("continuum.ini"), &out, &["analyze"]);
    assert!(run.status.success());
    assert!((f(&json(out.join("diffusion.json"))["sigma2"]) - 3.0).abs() < 1e-12);
}

#[test]
fn ldp_methods_agree() {
    let dir = TempDir::new().unwrap();
    for (name, config) in [("walk", write_config(&dir, WALK)), ("planar", configs().join("planar.ini"))] {
        let out = dir.path().join(name);
        let run = tumble(&config, &out, &["ldp"]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        let v = json(out.join("verify.json"));
        assert!(f(&v["max_spectral_variational"]) < 1e-8, "{name}: {v}");
        assert!(f(&v["max_young_residual"]) < 1e-10, "{name}: {v}");
        if name == "walk" {
            assert!(f(&v["max_closed_spectral"]) < 1e-12);
        }
        assert!(out.join("free_energy.csv").exists() && out.join("rate_function.csv").exists());
    }
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &format!("{WALK}endpoints = true\n"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(tumble(&config, &a, &["--threads", "1", "simulate"]).status.success());
    assert!(tumble(&config, &b, &["--threads", "3", "simulate"]).status.success());
    for file in ["sim_stats.json", "endpoints.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
    }
    let s = json(a.join("sim_stats.json"));
    assert_eq!(s["seed"], 7);
    assert_eq!(s["scgf"].as_array().unwrap().len(), 1);

    let c = dir.path().join("c");
    assert!(tumble(&config, &c, &["--seed", "8", "simulate"]).status.success());
    assert_ne!(std::fs::read(a.join("sim_stats.json")).unwrap(), std::fs::read(c.join("sim_stats.json")).unwrap());
}

#[test]
fn drift_velocity_is_recovered() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(configs().join("drift.ini")).unwrap().replace("replicas = 100000", "replicas = 5000");
    let out = dir.path().join("drift");
    assert!(tumble(&write_config(&dir, &text), &out, &["simulate"]).status.success());
    let s = json(out.join("sim_stats.json"));
    assert!((f(&s["analytic"]["velocity"][0]) - 1.0).abs() < 1e-12);
    let (v, err) = (f(&s["velocity"][0]), f(&s["velocity_stderr"][0]));
    assert!((v - 1.0).abs() < 4.0 * err, "{v} +- {err}");
}

#[test]
fn bad_config_exits_2_with_line() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &WALK.replace("gamma = 4", "gamma = -4"));
    let run = tumble(&config, &dir.path().join("o"), &["analyze"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains(":5:"), "{}", String::from_utf8_lossy(&run.stderr));
    let run = tumble(&dir.path().join("missing.ini"), &dir.path().join("o"), &["analyze"]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn verify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let light = "[verify]\nrecord_feynman_kac_horizon = 5\nrecord_feynman_kac_replicas = 1000\n";
    let out = dir.path().join("pass");
    let run = tumble(&write_config(&dir, &format!("{WALK}{light}criteria = 1, 3, 5, 6, 9\n")), &out, &["verify"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    let report = json(out.join("report.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 5);
    assert_eq!(report["records"].as_array().unwrap().len(), 9);

    let run = tumble(
        &write_config(&dir, &format!("{WALK}{light}criteria = 3\n[tolerances]\nsigma2 = 0\n")),
        &dir.path().join("strict"),
        &["verify"],
    );
    assert_eq!(run.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&run.stdout).contains("criterion  3 FAIL"));
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let config = RunConfig::load(&path).unwrap();
        config.build_model().unwrap();
        assert_eq!(RunConfig::parse(&config.to_text()).unwrap(), config, "{}", path.display());
    }
}
