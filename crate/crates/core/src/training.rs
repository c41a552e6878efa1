//! Hessian losses, parameter gradients and the training loop.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::model::{flat_matrix, Model};
use crate::molecule::Molecule;
use crate::Error;

/// Minimum eigengap at the subspace boundary for the subspace term.
pub const EIGENGAP_TOL: f64 = 1e-8;

/// One labelled geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub molecule: Molecule,
    /// eV.
    pub energy: f64,
    /// Flat `3N` forces, eV/A.
    pub forces: Vec<f64>,
    /// `3N x 3N`, eV/A^2.
    pub hessian: DMatrix<f64>,
}

impl Sample {
    pub fn validate(&self) -> Result<(), Error> {
        let n = 3 * self.molecule.len();
        if self.forces.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: self.forces.len(),
            });
        }
        if self.hessian.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                expected: n * n,
                got: self.hessian.len(),
            });
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-8 * self.hessian.amax().max(1.0) {
            return Err(Error::InvalidMolecule(format!("Hessian asymmetric by {asym:e}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "z": self.molecule.atomic_numbers(),
            "pos": self.molecule.positions(),
            "energy": self.energy,
            "forces": self.forces.chunks(3).collect::<Vec<_>>(),
            "hessian": self.hessian.transpose().as_slice(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, Error> {
        #[derive(Deserialize)]
        struct Raw {
            z: Vec<u32>,
            pos: Vec<[f64; 3]>,
            energy: f64,
            forces: Vec<[f64; 3]>,
            hessian: serde_json::Value,
        }
        let raw: Raw = serde_json::from_value(v.clone())?;
        let molecule = Molecule::new(raw.z, raw.pos)?;
        let n = 3 * molecule.len();
        let flat = flat_matrix(&raw.hessian)?;
        if flat.len() != n * n {
            return Err(Error::ShapeMismatch {
                expected: n * n,
                got: flat.len(),
            });
        }
        let s = Self {
            molecule,
            energy: raw.energy,
            forces: raw.forces.into_iter().flatten().collect(),
            hessian: DMatrix::from_row_slice(n, n, &flat),
        };
        s.validate()?;
        Ok(s)
    }
}

pub fn write_jsonl<W: Write>(mut w: W, samples: &[Sample]) -> Result<(), Error> {
    for s in samples {
        serde_json::to_writer(&mut w, &s.to_json())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Sample>, Error> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidConfig(format!("dataset line {}: {e}", k + 1)))?;
        out.push(Sample::from_json(&v).map_err(|e| Error::InvalidConfig(format!("dataset line {}: {e}", k + 1)))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementwiseKind {
    Mae,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: ElementwiseKind,
    /// Weight of the subspace term.
    pub alpha: f64,
    /// Number of lowest true eigenpairs in the subspace term.
    pub k: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: ElementwiseKind::Mae,
            alpha: 1.0,
            k: 8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.k <= 6 {
            return Err(Error::InvalidConfig(format!("subspace size k must exceed 6, got {}", self.k)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(), Error> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::ShapeMismatch {
            expected: b.len(),
            got: a.len(),
        });
    }
    Ok(())
}

/// Mean absolute or squared entrywise error.
pub fn loss_elementwise(pred: &DMatrix<f64>, truth: &DMatrix<f64>, kind: ElementwiseKind) -> Result<f64, Error> {
    check_shapes(pred, truth)?;
    let n = pred.len() as f64;
    let s: f64 = match kind {
        ElementwiseKind::Mae => pred.iter().zip(truth.iter()).map(|(a, b)| (a - b).abs()).sum(),
        ElementwiseKind::Mse => pred.iter().zip(truth.iter()).map(|(a, b)| (a - b).powi(2)).sum(),
    };
    Ok(s / n)
}

/// Ascending eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Columns are eigenvectors, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

pub fn sorted_eigen(m: &DMatrix<f64>) -> SortedEigen {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    SortedEigen {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors: DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]),
    }
}

/// `mean |V_k^T H_pred V_k - Lambda_k|` with `V_k`, `Lambda_k` the `k`
/// lowest eigenpairs of `H_true`.
pub fn loss_subspace(pred: &DMatrix<f64>, truth: &DMatrix<f64>, k: usize) -> Result<f64, Error> {
    check_shapes(pred, truth)?;
    if k == 0 || k > truth.nrows() {
        return Err(Error::InvalidConfig(format!("subspace size {k} outside 1..={}", truth.nrows())));
    }
    let eig = sorted_eigen(truth);
    Ok(subspace_residual(pred, &eig, k).abs().sum() / (k * k) as f64)
}

fn subspace_residual(pred: &DMatrix<f64>, eig: &SortedEigen, k: usize) -> DMatrix<f64> {
    let v = eig.vectors.columns(0, k);
    let mut r = v.transpose() * pred * v;
    for i in 0..k {
        r[(i, i)] -= eig.values[i];
    }
    r
}

/// Elementwise loss plus `alpha` times the subspace loss.
pub fn loss_total(pred: &DMatrix<f64>, truth: &DMatrix<f64>, cfg: &LossConfig) -> Result<f64, Error> {
    let mut l = loss_elementwise(pred, truth, cfg.kind)?;
    if cfg.alpha != 0.0 {
        l += cfg.alpha * loss_subspace(pred, truth, cfg.k)?;
    }
    Ok(l)
}

/// A sample with its target pre-scaled and pre-diagonalized.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub molecule: Molecule,
    pub target: DMatrix<f64>,
    eig: SortedEigen,
}

impl Prepared {
    pub fn new(sample: &Sample, scale: f64) -> Self {
        let target = &sample.hessian / scale;
        let eig = sorted_eigen(&target);
        Self {
            molecule: sample.molecule.clone(),
            target,
            eig,
        }
    }

    /// Whether the subspace boundary sits inside a (near) degenerate block.
    pub fn degenerate(&self, k: usize) -> bool {
        k < self.eig.values.len() && self.eig.values[k] - self.eig.values[k - 1] < EIGENGAP_TOL
    }
}

/// Loss value and `dL/d pred`; the flag is set when the subspace term was
/// dropped for a degenerate eigengap.
pub fn loss_and_grad(pred: &DMatrix<f64>, p: &Prepared, cfg: &LossConfig) -> Result<(f64, DMatrix<f64>, bool), Error> {
    check_shapes(pred, &p.target)?;
    let n = pred.len() as f64;
    let diff = pred - &p.target;
    let (mut loss, mut grad) = match cfg.kind {
        ElementwiseKind::Mae => (diff.abs().sum() / n, diff.map(|d| sign(d) / n)),
        ElementwiseKind::Mse => (diff.norm_squared() / n, diff * (2.0 / n)),
    };
    let mut flagged = false;
    if cfg.alpha != 0.0 {
        if cfg.k > pred.nrows() {
            return Err(Error::InvalidConfig(format!("subspace size {} exceeds {}", cfg.k, pred.nrows())));
        }
        if p.degenerate(cfg.k) {
            flagged = true;
        } else {
            let k = cfg.k;
            let r = subspace_residual(pred, &p.eig, k);
            let kk = (k * k) as f64;
            loss += cfg.alpha * r.abs().sum() / kk;
            let v = p.eig.vectors.columns(0, k);
            let s = r.map(|x| sign(x) * cfg.alpha / kk);
            grad += v * s * v.transpose();
        }
    }
    Ok((loss, grad, flagged))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss of one prepared sample and its gradient with respect to all
/// flattened parameters.
pub fn grad_params(model: &Model, p: &Prepared, cfg: &LossConfig) -> Result<(f64, Vec<f64>, bool), Error> {
    let pass = model.hessian_forward(&p.molecule)?;
    let (loss, g, flagged) = loss_and_grad(&pass.raw, p, cfg)?;
    Ok((loss, model.hessian_backward(&pass, &g), flagged))
}

/// Loss of one prepared sample (no gradient).
pub fn sample_loss(model: &Model, p: &Prepared, cfg: &LossConfig) -> Result<f64, Error> {
    let pass = model.hessian_forward(&p.molecule)?;
    Ok(loss_and_grad(&pass.raw, p, cfg)?.0)
}

pub fn mean_loss(model: &Model, samples: &[Prepared], cfg: &LossConfig) -> Result<f64, Error> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut s = 0.0;
    for p in samples {
        s += sample_loss(model, p, cfg)?;
    }
    Ok(s / samples.len() as f64)
}

/// RMS of all Hessian entries over a dataset.
pub fn hessian_scale(samples: &[Sample]) -> f64 {
    let (mut ss, mut n) = (0.0, 0usize);
    for s in samples {
        ss += s.hessian.norm_squared();
        n += s.hessian.len();
    }
    if n == 0 || ss == 0.0 {
        1.0
    } else {
        (ss / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiply the learning rate by `decay_factor` every `decay_every` steps.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 8,
            learning_rate: 5e-3,
            decay_every: 1500,
            decay_factor: 0.5,
            clip_norm: 0.1,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub step: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub initial_train: f64,
    pub initial_val: f64,
    pub curve: Vec<EpochLoss>,
    pub flagged_samples: usize,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train,val")?;
        writeln!(w, "0,{},{}", self.initial_train, self.initial_val)?;
        for e in &self.curve {
            writeln!(w, "{},{},{}", e.epoch, e.train, e.val)?;
        }
        Ok(())
    }

    pub fn final_val(&self) -> f64 {
        self.curve.last().map_or(self.initial_val, |e| e.val)
    }

    pub fn final_train(&self) -> f64 {
        self.curve.last().map_or(self.initial_train, |e| e.train)
    }
}

/// Adam with decoupled weight decay.
struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            let upd = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
            x[i] -= lr * (upd + wd * x[i]);
        }
    }
}

/// Train all parameters on the Hessian loss.
///
/// The model's `hessian_scale` is set to the RMS Hessian entry of `train`
/// and losses are reported on targets divided by it. One epoch is one pass
/// over `train` in shuffled mini-batches; training stops after
/// `cfg.steps` optimizer steps.
pub fn train(model: &mut Model, train: &[Sample], val: &[Sample], loss_cfg: &LossConfig, cfg: &TrainConfig) -> Result<TrainReport, Error> {
    loss_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    for s in train.iter().chain(val) {
        s.validate()?;
    }
    model.hessian_scale = hessian_scale(train);
    let scale = model.hessian_scale;
    let train_p: Vec<Prepared> = train.iter().map(|s| Prepared::new(s, scale)).collect();
    let val_p: Vec<Prepared> = val.iter().map(|s| Prepared::new(s, scale)).collect();
    let flagged_samples = train_p.iter().filter(|p| loss_cfg.alpha != 0.0 && p.degenerate(loss_cfg.k)).count();

    let initial_train = mean_loss(model, &train_p, loss_cfg)?;
    let initial_val = mean_loss(model, &val_p, loss_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model.num_params());
    let mut order: Vec<usize> = (0..train_p.len()).collect();
    let mut curve = Vec::new();
    let mut step = 0;
    let mut epoch = 0;
    while step < cfg.steps {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if step >= cfg.steps {
                break;
            }
            let mut grad = vec![0.0; model.num_params()];
            for &i in batch {
                let (l, g, _) = grad_params(model, &train_p[i], loss_cfg)?;
                if !l.is_finite() {
                    return Err(Error::Numerical(format!("non-finite loss on sample {i} at step {step}")));
                }
                epoch_loss += l;
                seen += 1;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b / batch.len() as f64;
                }
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            let lr = cfg.learning_rate * cfg.decay_factor.powi((step / cfg.decay_every.max(1)) as i32);
            opt.step(model.params_mut().values_mut(), &grad, lr, cfg.weight_decay);
            step += 1;
        }
        epoch += 1;
        let val_loss = mean_loss(model, &val_p, loss_cfg)?;
        if !val_loss.is_finite() && !val_p.is_empty() {
            return Err(Error::Numerical(format!("non-finite validation loss after epoch {epoch}")));
        }
        curve.push(EpochLoss {
            epoch,
            step,
            train: epoch_loss / seen.max(1) as f64,
            val: val_loss,
        });
    }
    Ok(TrainReport {
        initial_train,
        initial_val,
        curve,
        flagged_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a + a.transpose()
    }

    #[test]
    fn elementwise_values() {
        let p = DMatrix::from_element(1, 1, 2.0);
        let t = DMatrix::from_element(1, 1, 5.0);
        assert_eq!(loss_elementwise(&p, &t, ElementwiseKind::Mae).unwrap(), 3.0);
        assert_eq!(loss_elementwise(&p, &t, ElementwiseKind::Mse).unwrap(), 9.0);
        assert_eq!(loss_elementwise(&t, &t, ElementwiseKind::Mae).unwrap(), 0.0);
        assert!(loss_elementwise(&p, &DMatrix::zeros(2, 2), ElementwiseKind::Mae).is_err());
    }

    #[test]
    fn elementwise_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_sym(&mut rng, 6);
        let b = random_sym(&mut rng, 6);
        let mut mae = 0.0;
        let mut mse = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                mae += (a[(i, j)] - b[(i, j)]).abs() / 36.0;
                mse += (a[(i, j)] - b[(i, j)]).powi(2) / 36.0;
            }
        }
        assert!((loss_elementwise(&a, &b, ElementwiseKind::Mae).unwrap() - mae).abs() < 1e-14);
        assert!((loss_elementwise(&a, &b, ElementwiseKind::Mse).unwrap() - mse).abs() < 1e-14);
    }

    #[test]
    fn subspace_zero_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_sym(&mut rng, 9);
        assert!(loss_subspace(&h, &h, 8).unwrap() < 1e-14);
        let shifted = &h + DMatrix::identity(9, 9) * 0.3;
        // k diagonal entries of magnitude 0.3 averaged over k^2 entries
        assert!((loss_subspace(&shifted, &h, 8).unwrap() - 0.3 / 8.0).abs() < 1e-12);
        assert!(loss_subspace(&h, &h, 10).is_err());
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sym(&mut rng, 9);
        let b = random_sym(&mut rng, 9);
        let cfg0 = LossConfig { alpha: 0.0, ..LossConfig::default() };
        let cfg1 = LossConfig::default();
        let e = loss_elementwise(&a, &b, ElementwiseKind::Mae).unwrap();
        let s = loss_subspace(&a, &b, 8).unwrap();
        assert_eq!(loss_total(&a, &b, &cfg0).unwrap(), e);
        assert!((loss_total(&a, &b, &cfg1).unwrap() - (e + s)).abs() < 1e-14);
    }

    #[test]
    fn loss_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = random_sym(&mut rng, 9);
        let pred = random_sym(&mut rng, 9);
        let mol = Molecule::new(vec![1, 1, 1], vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let sample = Sample {
            molecule: mol,
            energy: 0.0,
            forces: vec![0.0; 9],
            hessian: truth,
        };
        let p = Prepared::new(&sample, 1.0);
        for kind in [ElementwiseKind::Mae, ElementwiseKind::Mse] {
            let cfg = LossConfig { kind, ..LossConfig::default() };
            let (_, g, flagged) = loss_and_grad(&pred, &p, &cfg).unwrap();
            assert!(!flagged);
            let h = 1e-7;
            for (i, j) in [(0, 0), (2, 5), (8, 1)] {
                let mut pp = pred.clone();
                pp[(i, j)] += h;
                let mut pm = pred.clone();
                pm[(i, j)] -= h;
                let fd = (loss_total(&pp, &p.target, &cfg).unwrap() - loss_total(&pm, &p.target, &cfg).unwrap()) / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-6, "{kind:?} ({i},{j}): {fd} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn degenerate_boundary_falls_back() {
        let truth = DMatrix::identity(9, 9);
        let mol = Molecule::new(vec![1, 1, 1], vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let sample = Sample {
            molecule: mol,
            energy: 0.0,
            forces: vec![0.0; 9],
            hessian: truth.clone(),
        };
        let p = Prepared::new(&sample, 1.0);
        let (l, _, flagged) = loss_and_grad(&(truth * 2.0), &p, &LossConfig::default()).unwrap();
        assert!(flagged);
        assert!((l - 1.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn jsonl_round_trip() {
        let mol = Molecule::new(vec![1, 8], vec![[0.0; 3], [0.0, 0.0, 0.97]]).unwrap();
        let h = DMatrix::from_fn(6, 6, |i, j| (i + j) as f64 * 0.5);
        let s = Sample {
            molecule: mol,
            energy: -1.5,
            forces: (0..6).map(|x| x as f64).collect(),
            hessian: h,
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[s.clone(), s.clone()]).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![s.clone(), s]);
    }

    #[test]
    fn k_must_exceed_six() {
        assert!(LossConfig { k: 6, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }
}
