//! End-to-end tests of the `hessnet` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hessnet_core::units;
use serde_json::Value;
use tempfile::TempDir;

fn hessnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hessnet")).args(args).output().expect("binary runs")
}

fn run_ok(dir: &Path, config: &str, cmd: &str) -> Value {
    let cfg = dir.join(format!("{cmd}.toml"));
    fs::write(&cfg, config).unwrap();
    let out = hessnet(&[cmd, "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_xyz(dir: &Path, name: &str, atoms: &[(&str, [f64; 3])]) -> PathBuf {
    let mut s = format!("{}\ntest\n", atoms.len());
    for (sym, p) in atoms {
        s += &format!("{sym} {} {} {}\n", p[0], p[1], p[2]);
    }
    let path = dir.join(name);
    fs::write(&path, s).unwrap();
    path
}

fn h2(dir: &Path) -> PathBuf {
    write_xyz(dir, "h2.xyz", &[("H", [0.0, 0.0, 0.0]), ("H", [0.74, 0.0, 0.0])])
}

const DOUBLE_WELL: &str = r#"
start = [0.0, -0.5, 0.0]
minima = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]
[potential]
kind = "generic_nd"
surface = { name = "double_well", dim = 3, height = 1.0, coupling = 0.5, stiffness = 2.0 }
"#;

#[test]
fn exit_codes() {
    assert_eq!(hessnet(&["--help"]).status.code(), Some(0));
    assert_eq!(hessnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hessnet(&["opt", "--criteria", "sloppy"]).status.code(), Some(1));
    assert_eq!(hessnet(&["freq", "--config", "/nonexistent/run.toml"]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "methd = \"rfo\"").unwrap();
    assert_eq!(hessnet(&["opt", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn harmonic_diatomic_frequency_and_zpe() {
    let dir = TempDir::new().unwrap();
    let xyz = h2(dir.path());
    let config = format!(
        "geometry = {:?}\n[potential]\nkind = \"harmonic_bond\"\nk = 10.0\nr0 = 0.74\n",
        xyz.to_str().unwrap()
    );
    let v = run_ok(dir.path(), &config, "freq");
    assert_eq!(v["classification"], "minimum");
    assert_eq!(v["frequencies"].as_array().unwrap().len(), 1);
    assert!(dir.path().join("freq_report.json").exists());

    let mu = 1.008 / 2.0;
    let omega = (10.0 / mu * units::curvature_to_s2()).sqrt();
    let expected = 0.5 * units::hbar_ev_s() * omega;
    let v = run_ok(dir.path(), &config, "zpe");
    let got = v["zpe_eV"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-9 * expected, "{got} vs {expected}");
}

#[test]
fn dataset_train_predict_freq_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    let base = format!(
        r#"
[potential]
kind = "lennard_jones"
epsilon = 1.0
sigma = 3.0
[data]
n_samples = 12
noise = 0.1
path = "{d}/dataset.jsonl"
[train]
steps = 3
batch_size = 4
[model]
channels = 2
layers = 1
num_radial = 4
embedding_dim = 4
"#
    );
    let g = run_ok(dir.path(), &base, "gen-data");
    assert_eq!(g["n_samples"], 12);
    let t = run_ok(dir.path(), &base, "train");
    assert_eq!(t["dataset_hash"], g["dataset_hash"]);
    assert!(dir.path().join("checkpoint.json").exists());
    assert!(dir.path().join("curve.csv").exists());

    let r = 2f64.powf(1.0 / 6.0) * 3.0;
    let xyz = write_xyz(dir.path(), "ar2.xyz", &[("Ar", [0.0; 3]), ("Ar", [r, 0.0, 0.0])]);
    let ck = format!(
        "checkpoint = \"{d}/checkpoint.json\"\ngeometry = {:?}\n[model]\nchannels = 2\nlayers = 1\nnum_radial = 4\nembedding_dim = 4\n",
        xyz.to_str().unwrap()
    );
    run_ok(dir.path(), &ck, "predict");
    let first = fs::read(dir.path().join("hessian.json")).unwrap();
    run_ok(dir.path(), &ck, "predict");
    assert_eq!(first, fs::read(dir.path().join("hessian.json")).unwrap(), "prediction is deterministic");

    let from_file = format!("hessian_file = \"{d}/hessian.json\"\ngeometry = {:?}\n", xyz.to_str().unwrap());
    let v = run_ok(dir.path(), &from_file, "freq");
    assert_eq!(v["hessian_source"], "file");
    assert!(v["eigenvalues"].as_array().is_some());
}

#[test]
fn gen_data_is_seed_deterministic() {
    let hash = |seed: u64| {
        let dir = TempDir::new().unwrap();
        let config = format!("seed = {seed}\n[potential]\nkind = \"morse\"\nde = 4.5\na = 1.0\nr0 = 1.1\n[data]\nelement = \"H\"\nn_samples = 5\n");
        run_ok(dir.path(), &config, "gen-data")["dataset_hash"].clone()
    };
    assert_eq!(hash(3), hash(3));
    assert_ne!(hash(3), hash(4));
}

#[test]
fn transition_state_and_reaction_path_on_double_well() {
    let dir = TempDir::new().unwrap();
    let v = run_ok(dir.path(), DOUBLE_WELL, "ts");
    assert_eq!(v["success"], true);
    let saddle: Vec<f64> = serde_json::from_value(v["final_geometry"].clone()).unwrap();
    assert!(saddle[0].abs() < 1e-3 && (saddle[1] + 0.5).abs() < 1e-3);

    let config = DOUBLE_WELL.replace("start = [0.0, -0.5, 0.0]", &format!("start = {saddle:?}"));
    let v = run_ok(dir.path(), &config, "irc");
    assert_eq!(v["distinct_minima_matched"], true);

    let v = run_ok(dir.path(), &format!("seeds = [0, 1, 2]{DOUBLE_WELL}[sweep]\nnoise = 0.1\n"), "ts");
    assert_eq!(v["runs"], 3);
    assert!(dir.path().join("ts_sweep.csv").exists());
}

#[test]
fn irc_refuses_a_minimum() {
    let dir = TempDir::new().unwrap();
    let config = DOUBLE_WELL.replace("start = [0.0, -0.5, 0.0]", "start = [1.0, 0.0, 0.0]");
    let cfg = dir.path().join("irc.toml");
    fs::write(&cfg, config).unwrap();
    let out = hessnet(&["irc", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn optimizer_sweep_writes_comparison() {
    let dir = TempDir::new().unwrap();
    let config = r#"
start = [0.8, 0.3, -0.2]
seeds = [0, 1]
[sweep]
noise = 0.05
compare = ["rfo:oracle", "rfo:bfgs:unit", "sd"]
[potential]
kind = "generic_nd"
surface = { name = "double_well", dim = 3, height = 1.0, coupling = 0.5, stiffness = 2.0 }
"#;
    let v = run_ok(dir.path(), config, "opt");
    let methods = v["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    assert!(methods.iter().all(|m| m["converged"] == 2));
    let csv = fs::read_to_string(dir.path().join("opt_compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}
