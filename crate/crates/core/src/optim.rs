//! Restricted-step RFO and P-RFO, BFGS updates, first-order baselines and
//! convergence criteria, all in Cartesian coordinates.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::potential::{analyze_at, Potential};
use crate::training::sorted_eigen;
use crate::units;
use crate::molecule::Molecule;
use crate::vib::{eckart_basis, Classification, VibrationalReport, NEG_THRESHOLD};
use crate::Error;

/// Thresholds in eV/A (forces) and A (steps). Absent entries are not checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCriteria {
    pub max_force: Option<f64>,
    pub rms_force: Option<f64>,
    pub max_step: Option<f64>,
    pub rms_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriteriaPreset {
    Loose,
    Default,
    Tight,
    VeryTight,
}

impl CriteriaPreset {
    pub const ALL: [Self; 4] = [Self::Loose, Self::Default, Self::Tight, Self::VeryTight];

    /// Table values in Hartree/Bohr (forces) and Bohr (steps), in the order
    /// max force, RMS force, max step, RMS step.
    pub fn native(self) -> [Option<f64>; 4] {
        match self {
            Self::Loose => [Some(1.7e-3), Some(1.0e-2), Some(6.7e-3), None],
            Self::Default => [Some(4.5e-4), Some(3.0e-4), Some(1.8e-3), Some(1.2e-3)],
            Self::Tight => [Some(1.5e-5), Some(1.0e-5), Some(6.0e-5), Some(4.0e-5)],
            Self::VeryTight => [Some(1.0e-6), None, Some(6.0e-6), Some(4.0e-6)],
        }
    }

    pub fn criteria(self) -> ConvergenceCriteria {
        let [mf, rf, ms, rs] = self.native();
        let f = units::hartree_per_bohr_ev_per_angstrom();
        let b = units::bohr_angstrom();
        ConvergenceCriteria {
            max_force: mf.map(|v| v * f),
            rms_force: rf.map(|v| v * f),
            max_step: ms.map(|v| v * b),
            rms_step: rs.map(|v| v * b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Loose => "loose",
            Self::Default => "default",
            Self::Tight => "tight",
            Self::VeryTight => "very_tight",
        }
    }
}

impl FromStr for CriteriaPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown criteria preset '{s}'")))
    }
}

/// Force and step norms at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub max_force: f64,
    pub rms_force: f64,
    /// Zero before the first step.
    pub max_step: f64,
    pub rms_step: f64,
}

fn max_rms(v: &DVector<f64>) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    (v.amax(), (v.norm_squared() / v.len() as f64).sqrt())
}

impl StepMetrics {
    pub fn new(gradient: &DVector<f64>, step: Option<&DVector<f64>>) -> Self {
        let (max_force, rms_force) = max_rms(gradient);
        let (max_step, rms_step) = step.map(max_rms).unwrap_or((0.0, 0.0));
        Self {
            max_force,
            rms_force,
            max_step,
            rms_step,
        }
    }
}

impl ConvergenceCriteria {
    pub fn validate(&self) -> Result<(), Error> {
        for v in [self.max_force, self.rms_force, self.max_step, self.rms_step].into_iter().flatten() {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("convergence thresholds must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Every present threshold is met. Step thresholds are vacuous before
    /// any step has been taken.
    pub fn met(&self, m: &StepMetrics) -> bool {
        let ok = |limit: Option<f64>, v: f64| limit.is_none_or(|l| v <= l);
        ok(self.max_force, m.max_force) && ok(self.rms_force, m.rms_force) && ok(self.max_step, m.max_step) && ok(self.rms_step, m.rms_step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfgsInit {
    Unit,
    Model,
    FiniteDifference,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianSource {
    Oracle,
    FiniteDifference,
    Model,
    Bfgs(BfgsInit),
}

impl fmt::Display for HessianSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Oracle => "oracle",
            Self::FiniteDifference => "fd",
            Self::Model => "model",
            Self::Bfgs(BfgsInit::Unit) => "bfgs:unit",
            Self::Bfgs(BfgsInit::Model) => "bfgs:model",
            Self::Bfgs(BfgsInit::FiniteDifference) => "bfgs:fd",
            Self::Bfgs(BfgsInit::Oracle) => "bfgs:oracle",
        };
        f.write_str(s)
    }
}

impl FromStr for HessianSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "oracle" => Self::Oracle,
            "fd" => Self::FiniteDifference,
            "model" => Self::Model,
            "bfgs:unit" => Self::Bfgs(BfgsInit::Unit),
            "bfgs:model" => Self::Bfgs(BfgsInit::Model),
            "bfgs:fd" => Self::Bfgs(BfgsInit::FiniteDifference),
            "bfgs:oracle" => Self::Bfgs(BfgsInit::Oracle),
            _ => return Err(Error::InvalidConfig(format!("unknown Hessian source '{s}'"))),
        })
    }
}

impl Serialize for HessianSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HessianSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl HessianSource {
    fn exact(self, p: &dyn Potential, x: &[f64]) -> Result<DMatrix<f64>, Error> {
        match self {
            Self::Oracle | Self::Bfgs(BfgsInit::Oracle) => p.oracle_hessian(x),
            Self::FiniteDifference | Self::Bfgs(BfgsInit::FiniteDifference) => p.fd_hessian(x),
            Self::Model | Self::Bfgs(BfgsInit::Model) => p.model_hessian(x),
            Self::Bfgs(BfgsInit::Unit) => Ok(DMatrix::identity(x.len(), x.len())),
        }
    }

    pub fn is_bfgs(self) -> bool {
        matches!(self, Self::Bfgs(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SteepestDescent,
    Fire,
    Rfo,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "sd" | "steepest_descent" => Ok(Self::SteepestDescent),
            "fire" => Ok(Self::Fire),
            "rfo" => Ok(Self::Rfo),
            _ => Err(Error::InvalidConfig(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustConfig {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    pub grow: f64,
    pub shrink: f64,
    pub good_ratio: f64,
    pub poor_ratio: f64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self {
            initial: 0.1,
            min: 1e-4,
            max: 0.3,
            grow: 1.2,
            shrink: 0.5,
            good_ratio: 0.75,
            poor_ratio: 0.25,
        }
    }
}

impl TrustConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(0.0 < self.min && self.min <= self.initial && self.initial <= self.max) {
            return Err(Error::InvalidConfig("trust radius needs 0 < min <= initial <= max".into()));
        }
        if !(self.grow >= 1.0 && self.shrink > 0.0 && self.shrink < 1.0 && self.poor_ratio < self.good_ratio) {
            return Err(Error::InvalidConfig("invalid trust-radius adaptation factors".into()));
        }
        Ok(())
    }

    /// Next radius given the actual/predicted energy-change ratio.
    pub fn adapt(&self, radius: f64, ratio: f64) -> f64 {
        if ratio > self.good_ratio {
            (radius * self.grow).min(self.max)
        } else if ratio < self.poor_ratio {
            (radius * self.shrink).max(self.min)
        } else {
            radius
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub method: Method,
    pub hessian: HessianSource,
    pub criteria: ConvergenceCriteria,
    pub max_steps: usize,
    pub trust: TrustConfig,
    pub neg_threshold: f64,
    /// Saddle searches stop as diverged beyond this distance from the start.
    pub divergence_radius: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            method: Method::Rfo,
            hessian: HessianSource::Oracle,
            criteria: CriteriaPreset::Default.criteria(),
            max_steps: 150,
            trust: TrustConfig::default(),
            neg_threshold: NEG_THRESHOLD,
            divergence_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub trajectory: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    /// One entry per trajectory frame.
    pub metrics: Vec<StepMetrics>,
    pub converged: bool,
    pub diverged: bool,
    /// Set when the run stopped on a numerical failure.
    pub aborted: Option<String>,
    pub steps: usize,
    pub wall_ms: f64,
    pub classification: Classification,
    pub skipped_updates: usize,
}

impl OptResult {
    pub fn final_geometry(&self) -> &[f64] {
        self.trajectory.last().expect("trajectory starts with x0")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfoMode {
    Min,
    Ts,
}

/// Lowest eigenpair of `[[diag(lambda), g], [g^T, 0]]`, returning the
/// intermediate-normalized step in the eigenbasis.
fn augmented_min(lambda: &[f64], g: &[f64]) -> Result<Vec<f64>, Error> {
    let n = lambda.len();
    let solve = |g: &[f64]| -> Option<Vec<f64>> {
        let mut a = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            a[(i, i)] = lambda[i];
            a[(i, n)] = g[i];
            a[(n, i)] = g[i];
        }
        let e = sorted_eigen(&a);
        let v = e.vectors.column(0);
        (v[n].abs() > 1e-12).then(|| (0..n).map(|i| v[i] / v[n]).collect())
    };
    if let Some(s) = solve(g) {
        return Ok(s);
    }
    let scale = g.iter().map(|v| v.abs()).fold(1e-12, f64::max);
    let perturbed: Vec<f64> = g.iter().enumerate().map(|(i, v)| v + 1e-8 * scale * (1.0 + i as f64)).collect();
    solve(&perturbed).ok_or_else(|| Error::Numerical("RFO augmented eigenvector has no step component".into()))
}

/// Level-shifted step `-(H - nu)^-1 g` whose length equals `radius`, with
/// `nu` below the lowest eigenvalue, found by bisection.
fn restricted_shift(lambda: &[f64], g: &[f64], radius: f64) -> Option<Vec<f64>> {
    let len = |nu: f64| lambda.iter().zip(g).map(|(l, gi)| (gi / (l - nu)).powi(2)).sum::<f64>().sqrt();
    let lmin = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut hi = lmin - 1e-12 * lmin.abs().max(1.0);
    if len(hi) < radius {
        return None;
    }
    let mut lo = lmin - gnorm / radius;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if len(mid) > radius {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(lambda.iter().zip(g).map(|(l, gi)| -gi / (l - lo)).collect())
}

/// Restricted-step RFO (`Min`) or partitioned RFO (`Ts`) step.
///
/// When the Hessian already has the target inertia and the Newton step
/// fits in the trust region, the Newton step is returned; otherwise the
/// augmented problems are solved. A minimization step that leaves the
/// trust sphere is replaced by the level-shifted step of exactly the trust
/// length; any remaining excess is removed by rescaling.
pub fn rfo_step(g: &DVector<f64>, h: &DMatrix<f64>, mode: RfoMode, trust_radius: f64) -> Result<DVector<f64>, Error> {
    let n = g.len();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::ShapeMismatch { expected: n, got: h.nrows() });
    }
    if g.iter().any(|v| !v.is_finite()) || h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite gradient or Hessian".into()));
    }
    if g.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(n));
    }
    let eig = sorted_eigen(h);
    let gt_all: Vec<f64> = (eig.vectors.transpose() * g).iter().copied().collect();
    let tol = 1e-8 * eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let gtol = 1e-10 * g.norm();
    // flat directions the gradient does not touch (projected rigid-body modes)
    let active: Vec<usize> = (0..n).filter(|&i| eig.values[i].abs() > tol || gt_all[i].abs() > gtol).collect();
    let lam: Vec<f64> = active.iter().map(|&i| eig.values[i]).collect();
    let gt: Vec<f64> = active.iter().map(|&i| gt_all[i]).collect();
    let n_neg = lam.iter().filter(|&&l| l < -tol).count();
    let nonsingular = lam.iter().all(|l| l.abs() > tol);
    let target_neg = match mode {
        RfoMode::Min => 0,
        RfoMode::Ts => 1,
    };

    let mut st: Vec<f64> = Vec::new();
    if nonsingular && n_neg == target_neg {
        let newton: Vec<f64> = gt.iter().zip(&lam).map(|(gi, li)| -gi / li).collect();
        if newton.iter().map(|v| v * v).sum::<f64>().sqrt() <= trust_radius {
            st = newton;
        }
    }
    if st.is_empty() {
        st = match mode {
            RfoMode::Min => augmented_min(&lam, &gt)?,
            RfoMode::Ts => {
                let (l0, g0) = (lam[0], gt[0]);
                let mu = 0.5 * l0 + (0.25 * l0 * l0 + g0 * g0).sqrt();
                let s0 = if g0 == 0.0 { 0.0 } else { -g0 / (l0 - mu) };
                let mut s = vec![s0];
                if lam.len() > 1 {
                    s.extend(augmented_min(&lam[1..], &gt[1..])?);
                }
                s
            }
        };
    }
    if mode == RfoMode::Min && st.iter().map(|v| v * v).sum::<f64>().sqrt() > trust_radius {
        if let Some(shifted) = restricted_shift(&lam, &gt, trust_radius) {
            st = shifted;
        }
    }
    let mut full = DVector::zeros(n);
    for (&i, v) in active.iter().zip(st) {
        full[i] = v;
    }
    let mut step = &eig.vectors * full;
    let norm = step.norm();
    if norm > trust_radius {
        step *= trust_radius / norm;
    }
    Ok(step)
}

/// Outcome of a BFGS update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    Applied,
    Skipped,
}

/// Two-term BFGS update, skipped unless `y^T s > 1e-10 |y| |s|`.
pub fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> UpdateStatus {
    let ys = y.dot(s);
    if !(ys > 1e-10 * y.norm() * s.norm()) {
        return UpdateStatus::Skipped;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return UpdateStatus::Skipped;
    }
    *b += y * y.transpose() / ys - &bs * bs.transpose() / sbs;
    // exact symmetry regardless of rounding in the two outer products
    let sym = (&*b + b.transpose()) * 0.5;
    *b = sym;
    UpdateStatus::Applied
}

struct Recorder {
    result: OptResult,
    start: Instant,
}

impl Recorder {
    fn new() -> Self {
        Self {
            result: OptResult {
                trajectory: Vec::new(),
                energies: Vec::new(),
                metrics: Vec::new(),
                converged: false,
                diverged: false,
                aborted: None,
                steps: 0,
                wall_ms: 0.0,
                classification: Classification::Unconverged,
                skipped_updates: 0,
            },
            start: Instant::now(),
        }
    }

    fn push(&mut self, x: &DVector<f64>, e: f64, m: StepMetrics) {
        self.result.trajectory.push(x.iter().copied().collect());
        self.result.energies.push(e);
        self.result.metrics.push(m);
    }

    fn finish(mut self, p: &dyn Potential, cfg: &OptConfig) -> OptResult {
        if self.result.converged {
            let x = self.result.final_geometry().to_vec();
            match analyze_at(p, &x, cfg.neg_threshold) {
                Ok(r) => self.result.classification = r.classification,
                Err(e) => self.result.aborted = Some(e.to_string()),
            }
        }
        self.result.wall_ms = self.start.elapsed().as_secs_f64() * 1e3;
        self.result
    }
}

fn evaluate(p: &dyn Potential, x: &DVector<f64>) -> Result<(f64, DVector<f64>), Error> {
    let (e, g) = p.evaluate(x.as_slice())?;
    if !e.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite energy or gradient".into()));
    }
    Ok((e, g))
}

fn check_start(p: &dyn Potential, x0: &[f64], cfg: &OptConfig) -> Result<(), Error> {
    cfg.criteria.validate()?;
    cfg.trust.validate()?;
    if x0.len() != p.dim() {
        return Err(Error::ShapeMismatch {
            expected: p.dim(),
            got: x0.len(),
        });
    }
    Ok(())
}

/// Minimize with the configured method and Hessian source.
pub fn optimize(p: &dyn Potential, x0: &[f64], cfg: &OptConfig) -> Result<OptResult, Error> {
    check_start(p, x0, cfg)?;
    match cfg.method {
        Method::SteepestDescent => steepest_descent(p, x0, cfg),
        Method::Fire => fire(p, x0, cfg),
        Method::Rfo => rfo_loop(p, x0, cfg, RfoMode::Min),
    }
}

/// RS-P-RFO saddle refinement followed by vibrational classification at
/// the final geometry.
pub fn ts_refine(p: &dyn Potential, x0: &[f64], cfg: &OptConfig) -> Result<(OptResult, Option<VibrationalReport>), Error> {
    check_start(p, x0, cfg)?;
    let res = rfo_loop(p, x0, cfg, RfoMode::Ts)?;
    let report = if res.converged {
        Some(analyze_at(p, res.final_geometry(), cfg.neg_threshold)?)
    } else {
        None
    };
    Ok((res, report))
}

/// A refinement counts as successful when it converged to a first-order
/// saddle.
pub fn ts_success(res: &OptResult) -> bool {
    res.converged && res.classification == Classification::TsOrder1
}

/// Cartesian projector onto the complement of rigid translations and
/// rotations, for potentials that describe a molecule.
fn rigid_projector(p: &dyn Potential, x: &[f64]) -> Option<DMatrix<f64>> {
    let mol = p.molecule(x)?;
    let unit = Molecule::with_masses(mol.atomic_numbers().to_vec(), mol.positions().to_vec(), vec![1.0; mol.len()]).ok()?;
    let b = eckart_basis(&unit);
    Some(DMatrix::identity(x.len(), x.len()) - &b * b.transpose())
}

/// Same eigenvectors with eigenvalues replaced by their magnitudes, so a
/// quasi-Newton minimization never starts from an indefinite model.
fn reflect_negative(h: &DMatrix<f64>) -> DMatrix<f64> {
    let e = sorted_eigen(h);
    let abs = DMatrix::from_diagonal(&DVector::from_iterator(e.values.len(), e.values.iter().map(|v| v.abs())));
    let m = &e.vectors * abs * e.vectors.transpose();
    (&m + m.transpose()) * 0.5
}

fn rfo_loop(p: &dyn Potential, x0: &[f64], cfg: &OptConfig, mode: RfoMode) -> Result<OptResult, Error> {
    let mut rec = Recorder::new();
    let start = DVector::from_column_slice(x0);
    let mut x = start.clone();
    let (mut e, mut g) = evaluate(p, &x)?;
    let mut last_step: Option<DVector<f64>> = None;
    let mut trust = cfg.trust.initial;
    let mut b = if cfg.hessian.is_bfgs() {
        let b0 = cfg.hessian.exact(p, x0)?;
        Some(if mode == RfoMode::Min { reflect_negative(&b0) } else { b0 })
    } else {
        None
    };
    rec.push(&x, e, StepMetrics::new(&g, None));
    loop {
        let m = StepMetrics::new(&g, last_step.as_ref());
        if cfg.criteria.met(&m) {
            rec.result.converged = true;
            break;
        }
        if rec.result.steps >= cfg.max_steps {
            break;
        }
        let h = match &b {
            Some(b) => b.clone(),
            None => cfg.hessian.exact(p, x.as_slice())?,
        };
        let (g_int, h) = match rigid_projector(p, x.as_slice()) {
            Some(proj) => (&proj * &g, &proj * h * &proj),
            None => (g.clone(), h),
        };
        let s = match rfo_step(&g_int, &h, mode, trust) {
            Ok(s) => s,
            Err(err) => {
                rec.result.aborted = Some(err.to_string());
                break;
            }
        };
        rec.result.steps += 1;
        let x_new = &x + &s;
        let (e_new, g_new) = match evaluate(p, &x_new) {
            Ok(v) => v,
            Err(err) => {
                rec.result.aborted = Some(err.to_string());
                break;
            }
        };
        let predicted = g_int.dot(&s) + 0.5 * s.dot(&(&h * &s));
        let actual = e_new - e;
        let ratio = if predicted.abs() < 1e-14 { 1.0 } else { actual / predicted };
        trust = cfg.trust.adapt(trust, ratio);
        // the trial point carries curvature information even when rejected
        if let Some(b) = b.as_mut() {
            if bfgs_update(b, &s, &(&g_new - &g)) == UpdateStatus::Skipped {
                rec.result.skipped_updates += 1;
            }
        }
        if mode == RfoMode::Min && actual > 1e-12 * e.abs().max(1.0) {
            // rejected uphill step: stay put with a smaller region
            trust = (s.norm() * cfg.trust.shrink).max(cfg.trust.min);
            continue;
        }
        x = x_new;
        e = e_new;
        g = g_new;
        rec.push(&x, e, StepMetrics::new(&g, Some(&s)));
        last_step = Some(s);
        if mode == RfoMode::Ts && (&x - &start).norm() > cfg.divergence_radius {
            rec.result.diverged = true;
            break;
        }
    }
    Ok(rec.finish(p, cfg))
}

fn steepest_descent(p: &dyn Potential, x0: &[f64], cfg: &OptConfig) -> Result<OptResult, Error> {
    let mut rec = Recorder::new();
    let mut x = DVector::from_column_slice(x0);
    let (mut e, mut g) = evaluate(p, &x)?;
    let mut last_step: Option<DVector<f64>> = None;
    rec.push(&x, e, StepMetrics::new(&g, None));
    loop {
        if cfg.criteria.met(&StepMetrics::new(&g, last_step.as_ref())) {
            rec.result.converged = true;
            break;
        }
        if rec.result.steps >= cfg.max_steps {
            break;
        }
        rec.result.steps += 1;
        let gg = g.norm_squared();
        // unit trial step, limited to the largest allowed displacement
        let mut t = (cfg.trust.max / g.norm().max(1e-300)).min(1.0);
        let mut accepted = None;
        for _ in 0..40 {
            let s = &g * -t;
            let xt = &x + &s;
            match evaluate(p, &xt) {
                Ok((et, gt)) if et <= e - 1e-4 * t * gg => {
                    accepted = Some((s, xt, et, gt));
                    break;
                }
                Ok(_) | Err(Error::Numerical(_)) => t *= 0.5,
                Err(err) => return Err(err),
            }
        }
        let Some((s, xt, et, gt)) = accepted else {
            rec.result.aborted = Some("line search failed to decrease the energy".into());
            break;
        };
        x = xt;
        e = et;
        g = gt;
        rec.push(&x, e, StepMetrics::new(&g, Some(&s)));
        last_step = Some(s);
    }
    Ok(rec.finish(p, cfg))
}

fn fire(p: &dyn Potential, x0: &[f64], cfg: &OptConfig) -> Result<OptResult, Error> {
    const DT_MAX: f64 = 1.0;
    const N_MIN: usize = 5;
    const F_INC: f64 = 1.1;
    const F_DEC: f64 = 0.5;
    const ALPHA0: f64 = 0.1;
    const F_ALPHA: f64 = 0.99;
    let mut rec = Recorder::new();
    let mut x = DVector::from_column_slice(x0);
    let (mut e, mut g) = evaluate(p, &x)?;
    let mut v = DVector::zeros(x.len());
    let (mut dt, mut alpha, mut since_neg) = (0.1, ALPHA0, 0usize);
    let mut last_step: Option<DVector<f64>> = None;
    rec.push(&x, e, StepMetrics::new(&g, None));
    loop {
        if cfg.criteria.met(&StepMetrics::new(&g, last_step.as_ref())) {
            rec.result.converged = true;
            break;
        }
        if rec.result.steps >= cfg.max_steps {
            break;
        }
        rec.result.steps += 1;
        let f = -&g;
        let power = f.dot(&v);
        if power > 0.0 {
            let fn_ = f.norm().max(1e-300);
            v = &v * (1.0 - alpha) + &f * (alpha * v.norm() / fn_);
            since_neg += 1;
            if since_neg > N_MIN {
                dt = (dt * F_INC).min(DT_MAX);
                alpha *= F_ALPHA;
            }
        } else {
            v.fill(0.0);
            dt *= F_DEC;
            alpha = ALPHA0;
            since_neg = 0;
        }
        v += &f * dt;
        let mut s = &v * dt;
        let norm = s.norm();
        if norm > cfg.trust.max {
            s *= cfg.trust.max / norm;
        }
        x += &s;
        match evaluate(p, &x) {
            Ok((en, gn)) => {
                e = en;
                g = gn;
            }
            Err(err) => {
                rec.result.aborted = Some(err.to_string());
                break;
            }
        }
        rec.push(&x, e, StepMetrics::new(&g, Some(&s)));
        last_step = Some(s);
    }
    Ok(rec.finish(p, cfg))
}

/// Newton step `-H^-1 g` through the eigensystem of `h`.
pub fn newton_step(g: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
    let e = SymmetricEigen::new(h.clone());
    let gt = e.eigenvectors.transpose() * g;
    let st = DVector::from_iterator(g.len(), gt.iter().zip(e.eigenvalues.iter()).map(|(a, l)| -a / l));
    e.eigenvectors * st
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{PotentialSpec, Surface};
    use crate::potential::OraclePotential;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n)
    }

    fn quadratic(k: &DMatrix<f64>) -> OraclePotential {
        let n = k.nrows();
        let matrix = (0..n).map(|i| (0..n).map(|j| k[(i, j)]).collect()).collect();
        OraclePotential::new(
            PotentialSpec::GenericNd {
                surface: Surface::Quadratic {
                    matrix,
                    center: vec![0.0; n],
                },
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn presets_convert_from_atomic_units() {
        let c = CriteriaPreset::Default.criteria();
        let f = units::hartree_per_bohr_ev_per_angstrom();
        assert_eq!(c.max_force, Some(4.5e-4 * f));
        assert!((c.max_force.unwrap() - 0.023_140).abs() < 1e-5);
        assert_eq!(CriteriaPreset::VeryTight.criteria().rms_force, None);
        assert_eq!("very_tight".parse::<CriteriaPreset>().unwrap(), CriteriaPreset::VeryTight);
    }

    #[test]
    fn hessian_source_names_round_trip() {
        for s in ["oracle", "fd", "model", "bfgs:unit", "bfgs:model", "bfgs:fd", "bfgs:oracle"] {
            assert_eq!(s.parse::<HessianSource>().unwrap().to_string(), s);
        }
        assert!("bfgs".parse::<HessianSource>().is_err());
    }

    #[test]
    fn rfo_is_newton_on_convex_quadratic() {
        let k = spd(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let g = &k * &x;
        let s = rfo_step(&g, &k, RfoMode::Min, 1e6).unwrap();
        assert!((&x + &s).amax() < 1e-10);
        assert!((s - newton_step(&g, &k)).amax() < 1e-10);
    }

    #[test]
    fn zero_gradient_zero_step() {
        let k = spd(3, 1);
        assert_eq!(rfo_step(&DVector::zeros(3), &k, RfoMode::Min, 0.1).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn step_respects_trust_radius() {
        let k = spd(4, 2);
        let g = DVector::from_element(4, 10.0);
        for mode in [RfoMode::Min, RfoMode::Ts] {
            assert!(rfo_step(&g, &k, mode, 0.05).unwrap().norm() <= 0.05 + 1e-15);
        }
        // indefinite Hessian in min mode still descends
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0]));
        let g = DVector::from_vec(vec![0.1, 0.1]);
        let s = rfo_step(&g, &h, RfoMode::Min, 10.0).unwrap();
        assert!(g.dot(&s) < 0.0);
    }

    #[test]
    fn ts_step_on_saddle() {
        // E = x^2 - y^2
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -2.0]));
        let x = DVector::from_vec(vec![0.3, 0.2]);
        let g = &h * &x;
        let s = rfo_step(&g, &h, RfoMode::Ts, 10.0).unwrap();
        assert!((&x + &s).amax() < 1e-12);
        // restricted: still moves downhill in x and uphill toward y = 0
        let s = rfo_step(&g, &h, RfoMode::Ts, 0.01).unwrap();
        assert!(s[0] < 0.0 && s[1] < 0.0);
        // from a positive-definite region P-RFO climbs along the lowest mode
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let g = DVector::from_vec(vec![0.1, 0.1]);
        let s = rfo_step(&g, &h, RfoMode::Ts, 10.0).unwrap();
        assert!(s[0] > 0.0 && s[1] < 0.0);
    }

    #[test]
    fn restricted_step_has_trust_length_and_descends() {
        let lam = [-0.5, 0.2, 3.0, 40.0];
        let g = [0.3, -1.0, 2.0, 0.5];
        for r in [0.01, 0.1, 0.5] {
            let s = restricted_shift(&lam, &g, r).unwrap();
            let len = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((len - r).abs() < 1e-10 * r);
            let model: f64 = (0..4).map(|i| g[i] * s[i] + 0.5 * lam[i] * s[i] * s[i]).sum();
            assert!(model < 0.0);
        }
        // a tiny region points along steepest descent
        let s = restricted_shift(&lam, &g, 1e-6).unwrap();
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = -(0..4).map(|i| s[i] * g[i]).sum::<f64>() / (gn * 1e-6);
        assert!(cos > 0.999_99);
    }

    #[test]
    fn reflected_start_is_positive_definite() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = reflect_negative(&h);
        let e = sorted_eigen(&r);
        assert!((e.values[0] - 1.0).abs() < 1e-12 && (e.values[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bfgs_properties() {
        let k = spd(4, 9);
        let mut b = DMatrix::identity(4, 4);
        let s = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05]);
        let y = &b * &s;
        let before = b.clone();
        bfgs_update(&mut b, &s, &y);
        assert!((&b - &before).amax() < 1e-15);
        assert_eq!(bfgs_update(&mut b, &s, &(-&s)), UpdateStatus::Skipped);
        assert_eq!(b, before);
        // n independent exact-line-search steps recover the Hessian
        let mut b = DMatrix::identity(4, 4);
        let mut x = DVector::from_vec(vec![1.0, -0.5, 0.3, 0.8]);
        for _ in 0..4 {
            let g = &k * &x;
            let d = -(b.clone().try_inverse().unwrap() * &g);
            let alpha = -g.dot(&d) / d.dot(&(&k * &d));
            let s = d * alpha;
            let y = &k * &s;
            assert_eq!(bfgs_update(&mut b, &s, &y), UpdateStatus::Applied);
            assert_eq!(b, b.transpose());
            x += s;
        }
        assert!((&b - &k).amax() < 1e-8, "{}", (&b - &k).amax());
    }

    #[test]
    fn rfo_quadratic_converges_in_two_steps() {
        let k = spd(6, 11) * 0.1;
        let p = quadratic(&k);
        let cfg = OptConfig {
            trust: TrustConfig {
                max: 100.0,
                initial: 100.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = optimize(&p, &[0.5, -0.3, 0.2, 0.1, 0.4, -0.2], &cfg).unwrap();
        assert!(r.converged && r.steps <= 2, "{}", r.steps);
        assert_eq!(r.classification, Classification::Minimum);
    }

    #[test]
    fn converged_start_takes_no_steps() {
        let p = quadratic(&spd(3, 5));
        for method in [Method::Rfo, Method::SteepestDescent, Method::Fire] {
            let cfg = OptConfig { method, ..Default::default() };
            let r = optimize(&p, &[0.0; 3], &cfg).unwrap();
            assert!(r.converged);
            assert_eq!(r.steps, 0);
        }
    }

    #[test]
    fn first_order_methods_converge_on_bowl() {
        let p = quadratic(&spd(3, 6));
        for method in [Method::SteepestDescent, Method::Fire] {
            let cfg = OptConfig {
                method,
                max_steps: 2000,
                ..Default::default()
            };
            let r = optimize(&p, &[0.3, -0.2, 0.1], &cfg).unwrap();
            assert!(r.converged, "{method:?}");
            let last = r.metrics.last().unwrap();
            assert!(cfg.criteria.met(last));
            assert!(r.energies.windows(2).all(|w| w[1] <= w[0] + 1e-12) || method == Method::Fire);
        }
    }

    #[test]
    fn double_well_ts_refine() {
        let p = OraclePotential::new(
            PotentialSpec::GenericNd {
                surface: Surface::DoubleWell {
                    dim: 3,
                    height: 1.0,
                    coupling: 0.5,
                    stiffness: 2.0,
                },
            },
            None,
        )
        .unwrap();
        let (r, rep) = ts_refine(&p, &[0.0, -0.5, 0.0], &OptConfig::default()).unwrap();
        assert_eq!(r.steps, 0);
        assert_eq!(rep.unwrap().classification, Classification::TsOrder1);
        let (r, _) = ts_refine(&p, &[0.08, -0.45, 0.05], &OptConfig::default()).unwrap();
        assert!(ts_success(&r), "{r:?}");
        let x = r.final_geometry();
        assert!(x[0].abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3);
    }
}
