//! Subcommand implementations. Each takes a resolved configuration, writes
//! its artifacts plus `<command>.json` under the output directory and
//! returns the summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hessnet_core::irc::{irc_both, IrcPath};
use hessnet_core::model::{HessianMatrix, Model};
use hessnet_core::molecule::{atomic_number, Molecule};
use hessnet_core::optim::{optimize, ts_refine, ts_success, HessianSource, Method, OptConfig, OptResult};
use hessnet_core::oracles::{gen_dataset, tetrahedron};
use hessnet_core::potential::{analyze_hessian, ModelAssisted, OraclePotential, Potential};
use hessnet_core::training::{read_jsonl, train, write_jsonl};
use hessnet_core::vib::Classification;
use hessnet_core::Error;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use crate::bench::{bench, median};
use crate::check::{format_table, run_checks};
use crate::checkpoint::{dataset_hash, Checkpoint, TrainingMeta};
use crate::config::RunConfig;
use crate::xyz::{parse_xyz, write_frame};
use crate::{write_atomic, CliError};

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

fn write_json(cfg: &RunConfig, name: &str, v: &Value) -> Result<PathBuf, CliError> {
    let path = out_path(cfg, name);
    let text = serde_json::to_string_pretty(v).map_err(Error::from)?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn summary(cfg: &RunConfig, command: &str, v: Value) -> Result<Value, CliError> {
    write_json(cfg, &format!("{command}.json"), &v)?;
    Ok(v)
}

fn read_geometry(path: &Path) -> Result<Molecule, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut frames = parse_xyz(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(frames.remove(0))
}

fn load_model(cfg: &RunConfig) -> Result<Option<Model>, CliError> {
    match &cfg.checkpoint {
        Some(p) => Ok(Some(Checkpoint::load(p)?.to_model()?)),
        None => Ok(None),
    }
}

/// Oracle surface and start coordinates from `potential` plus `geometry`
/// (molecular) or `start` (abstract surfaces).
fn oracle_and_start(cfg: &RunConfig) -> Result<(OraclePotential, Vec<f64>), CliError> {
    let spec = cfg
        .potential
        .clone()
        .ok_or_else(|| CliError::Usage("this command needs a [potential] section".into()))?;
    if spec.is_pairwise() {
        let path = cfg.geometry.as_ref().ok_or_else(|| CliError::Usage("pairwise potentials need `geometry`".into()))?;
        let mol = read_geometry(path)?;
        let x0 = mol.flat_positions();
        Ok((OraclePotential::new(spec, Some(mol))?, x0))
    } else {
        let x0 = cfg.start.clone().ok_or_else(|| CliError::Usage("abstract surfaces need `start`".into()))?;
        let p = OraclePotential::new(spec, None)?;
        if x0.len() != p.dim() {
            return Err(CliError::Usage(format!("`start` has {} entries, surface has dimension {}", x0.len(), p.dim())));
        }
        Ok((p, x0))
    }
}

fn with_potential<T>(cfg: &RunConfig, f: impl FnOnce(&dyn Potential, Vec<f64>) -> Result<T, CliError>) -> Result<T, CliError> {
    cfg.check_hessian_provider()?;
    let (oracle, x0) = oracle_and_start(cfg)?;
    match load_model(cfg)? {
        Some(model) => f(&ModelAssisted { oracle, model: &model }, x0),
        None => f(&oracle, x0),
    }
}

fn opt_config(cfg: &RunConfig, method: Method, hessian: HessianSource) -> OptConfig {
    OptConfig {
        method,
        hessian,
        criteria: cfg.criteria.criteria(),
        max_steps: cfg.max_steps,
        trust: cfg.trust,
        neg_threshold: cfg.neg_threshold,
        divergence_radius: cfg.divergence_radius,
    }
}

fn noised(x0: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return x0.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    x0.iter().map(|v| v + n.sample(&mut rng)).collect()
}

fn write_trajectory(p: &dyn Potential, cfg: &RunConfig, name: &str, frames: &[(Vec<f64>, f64)]) -> Result<Option<PathBuf>, CliError> {
    let mut text = String::new();
    for (x, e) in frames {
        match p.molecule(x) {
            Some(mol) => write_frame(&mut text, &mol, &format!("energy={e:.10}")),
            None => return Ok(None),
        }
    }
    let path = out_path(cfg, name);
    write_atomic(&path, text.as_bytes())?;
    Ok(Some(path))
}

fn classification_name(c: Classification) -> Value {
    serde_json::to_value(c).unwrap_or(Value::Null)
}

pub fn gen_data(cfg: &RunConfig) -> Result<Value, CliError> {
    let spec = cfg.potential.clone().ok_or_else(|| CliError::Usage("gen-data needs a [potential] section".into()))?;
    if !spec.is_pairwise() {
        return Err(CliError::Usage("gen-data needs a pairwise potential".into()));
    }
    let reference = match &cfg.data.reference {
        Some(p) => read_geometry(p)?,
        None => {
            let z = atomic_number(&cfg.data.element).ok_or_else(|| CliError::Usage(format!("unknown element '{}'", cfg.data.element)))?;
            let d = spec.equilibrium_distance().unwrap_or(1.5);
            tetrahedron(z, d)?
        }
    };
    let samples = gen_dataset(&spec, &reference, cfg.data.n_samples, cfg.data.noise, cfg.seed)?;
    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &samples)?;
    let path = cfg.data.path.clone().unwrap_or_else(|| out_path(cfg, "dataset.jsonl"));
    write_atomic(&path, &bytes)?;
    summary(
        cfg,
        "gen_data",
        json!({
            "path": path,
            "n_samples": samples.len(),
            "n_atoms": reference.len(),
            "noise": cfg.data.noise,
            "seed": cfg.seed,
            "dataset_hash": dataset_hash(&bytes),
        }),
    )
}

pub fn train_cmd(cfg: &RunConfig) -> Result<Value, CliError> {
    let path = cfg.data.path.clone().unwrap_or_else(|| out_path(cfg, "dataset.jsonl"));
    let bytes = fs::read(&path).map_err(|e| CliError::Usage(format!("cannot read dataset {}: {e}", path.display())))?;
    let samples = read_jsonl(bytes.as_slice())?;
    if !(0.0..1.0).contains(&cfg.data.val_fraction) {
        return Err(CliError::Usage("val_fraction must lie in [0, 1)".into()));
    }
    let n_val = ((samples.len() as f64) * cfg.data.val_fraction).round() as usize;
    let (train_set, val_set) = samples.split_at(samples.len() - n_val);
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    let t = Instant::now();
    let report = train(&mut model, train_set, val_set, &cfg.loss, &tcfg)?;
    let wall_ms = t.elapsed().as_secs_f64() * 1e3;
    let hash = dataset_hash(&bytes);
    let ck = Checkpoint::from_model(
        &model,
        TrainingMeta {
            seed: cfg.seed,
            dataset_hash: Some(hash.clone()),
            steps: tcfg.steps,
            final_train: Some(report.final_train()),
            final_val: Some(report.final_val()),
        },
    );
    let ck_path = cfg.checkpoint.clone().unwrap_or_else(|| out_path(cfg, "checkpoint.json"));
    ck.save(&ck_path)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(Error::from)?;
    write_atomic(&out_path(cfg, "curve.csv"), &csv)?;
    summary(
        cfg,
        "train",
        json!({
            "checkpoint": ck_path,
            "n_train": train_set.len(),
            "n_val": val_set.len(),
            "initial_train": report.initial_train,
            "initial_val": report.initial_val,
            "final_train": report.final_train(),
            "final_val": report.final_val(),
            "val_reduction": report.initial_val / report.final_val(),
            "flagged_samples": report.flagged_samples,
            "steps": tcfg.steps,
            "dataset_hash": hash,
            "wall_ms": wall_ms,
        }),
    )
}

pub fn predict(cfg: &RunConfig) -> Result<Value, CliError> {
    let model = load_model(cfg)?.ok_or_else(|| CliError::Usage("predict needs `checkpoint`".into()))?;
    let mol = read_geometry(cfg.geometry.as_ref().ok_or_else(|| CliError::Usage("predict needs `geometry`".into()))?)?;
    let t = Instant::now();
    let h = model.predict_hessian(&mol)?;
    let wall_ms = t.elapsed().as_secs_f64() * 1e3;
    let path = write_json(cfg, "hessian.json", &h.to_json())?;
    summary(cfg, "predict", json!({ "hessian": path, "n_atoms": mol.len(), "wall_ms": wall_ms }))
}

/// Molecule (if any), flat geometry, Hessian and a description of its source.
type ResolvedHessian = (Option<Molecule>, Vec<f64>, DMatrix<f64>, String);

/// Hessian for `freq` and `zpe`: a precomputed file, else the configured
/// provider at the input geometry.
fn resolve_hessian(cfg: &RunConfig) -> Result<ResolvedHessian, CliError> {
    if let Some(path) = &cfg.hessian_file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(Error::from)?;
        let h = HessianMatrix::from_json(&v)?;
        let mol = read_geometry(cfg.geometry.as_ref().ok_or_else(|| CliError::Usage("a Hessian file needs `geometry` for masses".into()))?)?;
        if mol.len() != h.n_atoms() {
            return Err(CliError::Usage(format!("Hessian has {} atoms, geometry has {}", h.n_atoms(), mol.len())));
        }
        let x = mol.flat_positions();
        return Ok((Some(mol), x, h.into_matrix(), "file".into()));
    }
    let src = cfg.hessian_source();
    if src == HessianSource::Model && cfg.potential.is_none() {
        let model = load_model(cfg)?.ok_or_else(|| CliError::Usage("model Hessians need `checkpoint`".into()))?;
        let mol = read_geometry(cfg.geometry.as_ref().ok_or_else(|| CliError::Usage("needs `geometry`".into()))?)?;
        let h = model.predict_hessian(&mol)?.into_matrix();
        let x = mol.flat_positions();
        return Ok((Some(mol), x, h, src.to_string()));
    }
    if src.is_bfgs() {
        return Err(CliError::Usage("frequency analysis needs an oracle, fd or model Hessian".into()));
    }
    with_potential(cfg, |p, x| {
        let h = match src {
            HessianSource::Oracle => p.oracle_hessian(&x)?,
            HessianSource::FiniteDifference => p.fd_hessian(&x)?,
            _ => p.model_hessian(&x)?,
        };
        Ok((p.molecule(&x), x, h, src.to_string()))
    })
}

fn report_for(mol: &Option<Molecule>, h: &DMatrix<f64>, neg: f64) -> Result<hessnet_core::vib::VibrationalReport, CliError> {
    Ok(match mol {
        Some(m) => hessnet_core::vib::analyze(m, h, neg)?.1,
        None => hessnet_core::vib::report_from_matrix(h, neg),
    })
}

pub fn freq(cfg: &RunConfig) -> Result<Value, CliError> {
    let (mol, _, h, source) = resolve_hessian(cfg)?;
    let report = report_for(&mol, &h, cfg.neg_threshold)?;
    let mut v = serde_json::to_value(&report).map_err(Error::from)?;
    v["hessian_source"] = json!(source);
    write_json(cfg, "freq_report.json", &v)?;
    summary(cfg, "freq", v)
}

pub fn zpe(cfg: &RunConfig) -> Result<Value, CliError> {
    let (mol, _, h, source) = resolve_hessian(cfg)?;
    let report = report_for(&mol, &h, cfg.neg_threshold)?;
    summary(
        cfg,
        "zpe",
        json!({
            "zpe_eV": report.zpe_ev,
            "n_modes": report.eigenvalues.len(),
            "n_negative_excluded": report.n_negative,
            "hessian_source": source,
        }),
    )
}

fn run_summary(cfg: &RunConfig, method: Method, source: HessianSource, r: &OptResult) -> Value {
    json!({
        "method": method,
        "hessian_source": source,
        "steps": r.steps,
        "converged": r.converged,
        "diverged": r.diverged,
        "aborted": r.aborted,
        "wall_ms": r.wall_ms,
        "criteria_name": cfg.criteria.name(),
        "final_energy": r.energies.last(),
        "classification": classification_name(r.classification),
    })
}

/// Parse "rfo:bfgs:unit", "sd", "fire" into a method and Hessian source.
pub fn parse_method_spec(s: &str) -> Result<(Method, HessianSource), CliError> {
    let (m, h) = s.split_once(':').unwrap_or((s, "oracle"));
    Ok((m.parse()?, h.parse()?))
}

pub fn opt(cfg: &RunConfig) -> Result<Value, CliError> {
    let sweep = !cfg.seeds.is_empty() || !cfg.sweep.compare.is_empty();
    let mut runs: Vec<(Method, HessianSource)> = cfg.sweep.compare.iter().map(|s| parse_method_spec(s)).collect::<Result<_, _>>()?;
    if runs.is_empty() {
        runs.push((cfg.method, cfg.hessian_source()));
    }
    for &(_, src) in &runs {
        let mut probe = cfg.clone();
        probe.hessian = Some(src);
        probe.check_hessian_provider()?;
    }
    with_potential(cfg, |p, x0| {
        if !sweep {
            let (method, src) = runs[0];
            let r = optimize(p, &x0, &opt_config(cfg, method, src))?;
            let frames: Vec<(Vec<f64>, f64)> = r.trajectory.iter().cloned().zip(r.energies.iter().copied()).collect();
            let traj = write_trajectory(p, cfg, "opt_trajectory.xyz", &frames)?;
            let mut v = run_summary(cfg, method, src, &r);
            v["trajectory"] = json!(traj);
            v["final_geometry"] = json!(r.final_geometry());
            if r.aborted.is_some() {
                summary(cfg, "opt", v.clone())?;
                return Err(CliError::Failure(format!("optimization aborted: {}", r.aborted.unwrap_or_default())));
            }
            return summary(cfg, "opt", v);
        }
        let seeds = if cfg.seeds.is_empty() { vec![cfg.seed] } else { cfg.seeds.clone() };
        let mut csv = String::from("seed,method,hessian_source,steps,converged,final_energy\n");
        let mut per_method: Vec<Vec<f64>> = vec![Vec::new(); runs.len()];
        let mut converged: Vec<usize> = vec![0; runs.len()];
        for &seed in &seeds {
            let start = noised(&x0, cfg.sweep.noise, seed);
            for (k, &(method, src)) in runs.iter().enumerate() {
                let r = optimize(p, &start, &opt_config(cfg, method, src))?;
                csv += &format!(
                    "{seed},{},{src},{},{},{}\n",
                    serde_json::to_value(method).map_err(Error::from)?.as_str().unwrap_or("?"),
                    r.steps,
                    r.converged,
                    r.energies.last().copied().unwrap_or(f64::NAN)
                );
                per_method[k].push(r.steps as f64);
                converged[k] += r.converged as usize;
            }
        }
        write_atomic(&out_path(cfg, "opt_compare.csv"), csv.as_bytes())?;
        let methods: Vec<Value> = runs
            .iter()
            .zip(per_method.iter_mut())
            .zip(&converged)
            .map(|((&(m, s), steps), &c)| {
                json!({
                    "method": m,
                    "hessian_source": s,
                    "median_steps": median(steps),
                    "converged": c,
                    "runs": seeds.len(),
                })
            })
            .collect();
        summary(
            cfg,
            "opt",
            json!({ "criteria_name": cfg.criteria.name(), "noise": cfg.sweep.noise, "seeds": seeds, "methods": methods }),
        )
    })
}

pub fn ts(cfg: &RunConfig) -> Result<Value, CliError> {
    let src = cfg.hessian_source();
    with_potential(cfg, |p, x0| {
        let ocfg = opt_config(cfg, Method::Rfo, src);
        if cfg.seeds.is_empty() {
            let (r, report) = ts_refine(p, &x0, &ocfg)?;
            let frames: Vec<(Vec<f64>, f64)> = r.trajectory.iter().cloned().zip(r.energies.iter().copied()).collect();
            let traj = write_trajectory(p, cfg, "ts_trajectory.xyz", &frames)?;
            let mut v = run_summary(cfg, Method::Rfo, src, &r);
            v["success"] = json!(ts_success(&r));
            v["report"] = serde_json::to_value(&report).map_err(Error::from)?;
            v["trajectory"] = json!(traj);
            v["final_geometry"] = json!(r.final_geometry());
            return summary(cfg, "ts", v);
        }
        let mut csv = String::from("seed,steps,converged,diverged,classification,success\n");
        let mut successes = 0;
        for &seed in &cfg.seeds {
            let start = noised(&x0, cfg.sweep.noise, seed);
            let (r, _) = ts_refine(p, &start, &ocfg)?;
            let ok = ts_success(&r);
            successes += ok as usize;
            csv += &format!(
                "{seed},{},{},{},{},{ok}\n",
                r.steps,
                r.converged,
                r.diverged,
                classification_name(r.classification).as_str().unwrap_or("?")
            );
        }
        write_atomic(&out_path(cfg, "ts_sweep.csv"), csv.as_bytes())?;
        summary(
            cfg,
            "ts",
            json!({
                "hessian_source": src,
                "criteria_name": cfg.criteria.name(),
                "perturbation": cfg.sweep.noise,
                "runs": cfg.seeds.len(),
                "successes": successes,
                "success_rate": successes as f64 / cfg.seeds.len() as f64,
            }),
        )
    })
}

fn branch_summary(path: &IrcPath) -> Value {
    json!({
        "direction": path.direction,
        "steps": path.frames.len() - 1,
        "converged": path.converged,
        "aborted": path.aborted,
        "terminal": path.terminal(),
        "terminal_energy": path.frames.last().map(|f| f.energy),
        "matched_minimum": path.matched_minimum,
    })
}

pub fn irc(cfg: &RunConfig) -> Result<Value, CliError> {
    let src = cfg.hessian_source();
    if src.is_bfgs() {
        return Err(CliError::Usage("IRC initialization needs an oracle, fd or model Hessian".into()));
    }
    with_potential(cfg, |p, x0| {
        let h = match src {
            HessianSource::Oracle => p.oracle_hessian(&x0)?,
            HessianSource::FiniteDifference => p.fd_hessian(&x0)?,
            _ => p.model_hessian(&x0)?,
        };
        let report = analyze_hessian(p, &x0, &h, cfg.neg_threshold)?;
        if report.n_negative != 1 {
            return Err(CliError::Failure(format!("start is not a first-order saddle ({} negative modes)", report.n_negative)));
        }
        let mut branches = irc_both(p, &x0, &h, &cfg.irc)?;
        let mut out = Vec::new();
        for b in branches.iter_mut() {
            if !cfg.minima.is_empty() {
                b.match_minimum(&cfg.minima, 0.05);
            }
            let name = match b.direction {
                hessnet_core::irc::Direction::Forward => "irc_forward.xyz",
                hessnet_core::irc::Direction::Backward => "irc_backward.xyz",
            };
            let frames: Vec<(Vec<f64>, f64)> = b.frames.iter().map(|f| (f.x.clone(), f.energy)).collect();
            let mut s = branch_summary(b);
            s["trajectory"] = json!(write_trajectory(p, cfg, name, &frames)?);
            out.push(s);
        }
        let both_matched = branches.iter().all(|b| b.matched_minimum.is_some()) && branches[0].matched_minimum != branches[1].matched_minimum;
        summary(
            cfg,
            "irc",
            json!({
                "hessian_source": src,
                "step_size": cfg.irc.step_size,
                "branches": out,
                "distinct_minima_matched": if cfg.minima.is_empty() { Value::Null } else { json!(both_matched) },
            }),
        )
    })
}

pub fn bench_cmd(cfg: &RunConfig) -> Result<Value, CliError> {
    let model = match load_model(cfg)? {
        Some(m) => m,
        None => Model::new(cfg.model.clone(), cfg.seed)?,
    };
    let z = atomic_number(&cfg.bench.element).ok_or_else(|| CliError::Usage(format!("unknown element '{}'", cfg.bench.element)))?;
    let rows = bench(&model, z, &cfg.bench.sizes, cfg.bench.repeats, cfg.seed)?;
    let mut csv = String::from("n_atoms,direct_ms,fd_ms,ratio,direct_elements,fd_elements\n");
    for r in &rows {
        csv += &format!("{},{},{},{},{},{}\n", r.n_atoms, r.direct_ms, r.fd_ms, r.ratio, r.direct_elements, r.fd_elements);
    }
    write_atomic(&out_path(cfg, "bench.csv"), csv.as_bytes())?;
    summary(cfg, "bench", json!({ "repeats": cfg.bench.repeats, "rows": rows }))
}

pub fn check(cfg: &RunConfig) -> Result<Value, CliError> {
    let rows = run_checks(cfg.seed)?;
    print!("{}", format_table(&rows));
    let all = rows.iter().all(|r| r.pass);
    let v = summary(cfg, "check", json!({ "pass": all, "rows": rows }))?;
    if all {
        Ok(v)
    } else {
        Err(CliError::Failure("invariant checks failed".into()))
    }
}

