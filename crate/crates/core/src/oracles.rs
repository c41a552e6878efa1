//! Analytic reference potentials with closed-form forces and Hessians, and
//! the central-difference Hessian.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::molecule::Molecule;
use crate::training::Sample;
use crate::Error;

/// Default central-difference step in Angstrom.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `k/2 (r - r0)^2` over all pairs; `k` in eV/A^2, `r0` in A.
    HarmonicBond { k: f64, r0: f64 },
    /// `D_e (1 - exp(-a (r - r0)))^2` over all pairs.
    Morse { de: f64, a: f64, r0: f64 },
    /// `4 eps ((sigma/r)^12 - (sigma/r)^6)` over all pairs.
    LennardJones { epsilon: f64, sigma: f64 },
    /// Test function on flat coordinates of any dimension.
    GenericNd { surface: Surface },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Surface {
    /// `1/2 (x - c)^T K (x - c)`; `matrix` must be symmetric.
    Quadratic { matrix: Vec<Vec<f64>>, center: Vec<f64> },
    /// `h (x0^2 - 1)^2 + kappa/2 (x1 - c (x0^2 - 1))^2 + kappa/2 sum_{i>1} x_i^2`.
    /// Minima at `x0 = +-1`, first-order saddle at `(0, -c, 0, ..)`.
    DoubleWell { dim: usize, height: f64, coupling: f64, stiffness: f64 },
    /// The two-dimensional Muller-Brown surface.
    MullerBrown,
}

/// Energy (eV), forces (`-grad E`, flat) and exact Hessian.
#[derive(Debug, Clone)]
pub struct OracleEval {
    pub energy: f64,
    pub forces: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

impl OracleEval {
    pub fn gradient(&self) -> Vec<f64> {
        self.forces.iter().map(|f| -f).collect()
    }
}

impl PotentialSpec {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            Self::HarmonicBond { k, r0 } => positive("k", *k).and(positive("r0", *r0)),
            Self::Morse { de, a, r0 } => positive("de", *de).and(positive("a", *a)).and(positive("r0", *r0)),
            Self::LennardJones { epsilon, sigma } => positive("epsilon", *epsilon).and(positive("sigma", *sigma)),
            Self::GenericNd { surface } => surface.validate(),
        }
    }

    pub fn is_pairwise(&self) -> bool {
        !matches!(self, Self::GenericNd { .. })
    }

    /// Equilibrium pair distance, if the potential has one.
    pub fn equilibrium_distance(&self) -> Option<f64> {
        match self {
            Self::HarmonicBond { r0, .. } | Self::Morse { r0, .. } => Some(*r0),
            Self::LennardJones { sigma, .. } => Some(2f64.powf(1.0 / 6.0) * sigma),
            Self::GenericNd { .. } => None,
        }
    }

    /// `(phi, phi', phi'')` of the pair term at distance `r`.
    fn pair_terms(&self, r: f64) -> (f64, f64, f64) {
        match *self {
            Self::HarmonicBond { k, r0 } => (0.5 * k * (r - r0).powi(2), k * (r - r0), k),
            Self::Morse { de, a, r0 } => {
                let e = (-a * (r - r0)).exp();
                (de * (1.0 - e).powi(2), 2.0 * a * de * e * (1.0 - e), 2.0 * a * a * de * e * (2.0 * e - 1.0))
            }
            Self::LennardJones { epsilon, sigma } => {
                let s6 = (sigma / r).powi(6);
                let s12 = s6 * s6;
                (
                    4.0 * epsilon * (s12 - s6),
                    4.0 * epsilon * (-12.0 * s12 + 6.0 * s6) / r,
                    4.0 * epsilon * (156.0 * s12 - 42.0 * s6) / (r * r),
                )
            }
            Self::GenericNd { .. } => unreachable!("not a pair potential"),
        }
    }
}

impl Surface {
    fn validate(&self) -> Result<(), Error> {
        match self {
            Self::Quadratic { matrix, center } => {
                let n = center.len();
                if n == 0 || matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidConfig("quadratic matrix must be n x n with an n-vector center".into()));
                }
                for i in 0..n {
                    for j in 0..n {
                        if matrix[i][j] != matrix[j][i] {
                            return Err(Error::InvalidConfig("quadratic matrix must be symmetric".into()));
                        }
                    }
                }
                Ok(())
            }
            Self::DoubleWell {
                dim,
                height,
                stiffness,
                ..
            } => {
                if *dim < 2 || !(*height > 0.0) || !(*stiffness > 0.0) {
                    return Err(Error::InvalidConfig("double well needs dim >= 2 and positive height, stiffness".into()));
                }
                Ok(())
            }
            Self::MullerBrown => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic { center, .. } => center.len(),
            Self::DoubleWell { dim, .. } => *dim,
            Self::MullerBrown => 2,
        }
    }

    fn eval(&self, x: &[f64]) -> OracleEval {
        let n = x.len();
        let mut g = vec![0.0; n];
        let mut h = DMatrix::zeros(n, n);
        let energy;
        match self {
            Self::Quadratic { matrix, center } => {
                let k = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
                let d = nalgebra::DVector::from_iterator(n, x.iter().zip(center).map(|(a, b)| a - b));
                let kd = &k * &d;
                energy = 0.5 * d.dot(&kd);
                g.copy_from_slice(kd.as_slice());
                h = k;
            }
            &Self::DoubleWell {
                height,
                coupling,
                stiffness,
                ..
            } => {
                let x0 = x[0];
                let s = x0 * x0 - 1.0;
                let u = x[1] - coupling * s;
                energy = height * s * s + 0.5 * stiffness * (u * u + x[2..].iter().map(|v| v * v).sum::<f64>());
                g[0] = 4.0 * height * x0 * s - 2.0 * stiffness * coupling * x0 * u;
                g[1] = stiffness * u;
                for i in 2..n {
                    g[i] = stiffness * x[i];
                    h[(i, i)] = stiffness;
                }
                h[(0, 0)] = 4.0 * height * (s + 2.0 * x0 * x0) + stiffness * (4.0 * coupling * coupling * x0 * x0 - 2.0 * coupling * u);
                h[(0, 1)] = -2.0 * stiffness * coupling * x0;
                h[(1, 0)] = h[(0, 1)];
                h[(1, 1)] = stiffness;
            }
            Self::MullerBrown => {
                const A: [f64; 4] = [-200.0, -100.0, -170.0, 15.0];
                const AA: [f64; 4] = [-1.0, -1.0, -6.5, 0.7];
                const B: [f64; 4] = [0.0, 0.0, 11.0, 0.6];
                const C: [f64; 4] = [-10.0, -10.0, -6.5, 0.7];
                const X0: [f64; 4] = [1.0, 0.0, -0.5, -1.0];
                const Y0: [f64; 4] = [0.0, 0.5, 1.5, 1.0];
                let mut e = 0.0;
                for k in 0..4 {
                    let (dx, dy) = (x[0] - X0[k], x[1] - Y0[k]);
                    let t = A[k] * (AA[k] * dx * dx + B[k] * dx * dy + C[k] * dy * dy).exp();
                    let px = 2.0 * AA[k] * dx + B[k] * dy;
                    let py = B[k] * dx + 2.0 * C[k] * dy;
                    e += t;
                    g[0] += t * px;
                    g[1] += t * py;
                    h[(0, 0)] += t * (px * px + 2.0 * AA[k]);
                    h[(1, 1)] += t * (py * py + 2.0 * C[k]);
                    h[(0, 1)] += t * (px * py + B[k]);
                }
                h[(1, 0)] = h[(0, 1)];
                energy = e;
            }
        }
        OracleEval {
            energy,
            forces: g.iter().map(|v| -v).collect(),
            hessian: h,
        }
    }
}

/// Closed-form energy, forces and Hessian at flat coordinates `x`.
pub fn oracle_eval(spec: &PotentialSpec, x: &[f64]) -> Result<OracleEval, Error> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite coordinate".into()));
    }
    if let PotentialSpec::GenericNd { surface } = spec {
        if x.len() != surface.dim() {
            return Err(Error::ShapeMismatch {
                expected: surface.dim(),
                got: x.len(),
            });
        }
        return Ok(surface.eval(x));
    }
    if !x.len().is_multiple_of(3) || x.is_empty() {
        return Err(Error::InvalidConfig(format!("{} coordinates do not form 3D atoms", x.len())));
    }
    let n = x.len() / 3;
    let mut energy = 0.0;
    let mut forces = vec![0.0; 3 * n];
    let mut hess = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for j in i + 1..n {
            let rij = Vector3::new(x[3 * j] - x[3 * i], x[3 * j + 1] - x[3 * i + 1], x[3 * j + 2] - x[3 * i + 2]);
            let r = rij.norm();
            if r == 0.0 {
                return Err(Error::CoincidentAtoms(i, j));
            }
            let u = rij / r;
            let (phi, d1, d2) = spec.pair_terms(r);
            energy += phi;
            for k in 0..3 {
                forces[3 * j + k] -= d1 * u[k];
                forces[3 * i + k] += d1 * u[k];
            }
            let uu = u * u.transpose();
            let kblk = uu * d2 + (Matrix3::identity() - uu) * (d1 / r);
            for (a, b, sign) in [(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)] {
                let mut v = hess.fixed_view_mut::<3, 3>(3 * a, 3 * b);
                v += kblk * sign;
            }
        }
    }
    Ok(OracleEval {
        energy,
        forces,
        hessian: hess,
    })
}

/// Central-difference Hessian: symmetrized matrix plus the raw asymmetry.
#[derive(Debug, Clone)]
pub struct FdHessian {
    pub matrix: DMatrix<f64>,
    /// `max |H - H^T|` before symmetrization.
    pub asymmetry: f64,
}

/// `H_ij = -(F_i(x + h e_j) - F_i(x - h e_j)) / 2h`, then `(H + H^T) / 2`.
pub fn fd_hessian<F>(mut force_fn: F, x: &[f64], h: f64) -> Result<FdHessian, Error>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, Error>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {h}")));
    }
    let n = x.len();
    let mut raw = DMatrix::zeros(n, n);
    let mut xd = x.to_vec();
    for j in 0..n {
        let mut eval = |sign: f64, xd: &mut Vec<f64>| -> Result<Vec<f64>, Error> {
            xd[j] = x[j] + sign * h;
            let f = force_fn(xd)?;
            if f.len() != n {
                return Err(Error::ShapeMismatch { expected: n, got: f.len() });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite force at displacement {}{h} along coordinate {j}",
                    if sign > 0.0 { "+" } else { "-" }
                )));
            }
            Ok(f)
        };
        let fp = eval(1.0, &mut xd)?;
        let fm = eval(-1.0, &mut xd)?;
        xd[j] = x[j];
        for i in 0..n {
            raw[(i, j)] = -(fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let asymmetry = (&raw - raw.transpose()).amax();
    let matrix = (&raw + raw.transpose()) * 0.5;
    Ok(FdHessian { matrix, asymmetry })
}

/// Noised copies of `reference` labelled by the oracle.
///
/// Every Cartesian coordinate receives an independent Gaussian displacement
/// with standard deviation `noise`, so the RMS displacement equals `noise`.
pub fn gen_dataset(spec: &PotentialSpec, reference: &Molecule, n_samples: usize, noise: f64, seed: u64) -> Result<Vec<Sample>, Error> {
    spec.validate()?;
    if !spec.is_pairwise() {
        return Err(Error::InvalidConfig("datasets need a molecular potential".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let x0 = reference.flat_positions();
    let mut out = Vec::with_capacity(n_samples);
    while out.len() < n_samples {
        let x: Vec<f64> = x0.iter().map(|v| v + dist.sample(&mut rng)).collect();
        let Ok(mol) = reference.with_flat_positions(&x) else {
            continue;
        };
        let eval = oracle_eval(spec, &x)?;
        out.push(Sample {
            molecule: mol,
            energy: eval.energy,
            forces: eval.forces,
            hessian: eval.hessian,
        });
    }
    Ok(out)
}

/// Regular tetrahedron with edge `d` centred at the origin.
pub fn tetrahedron(z: u32, d: f64) -> Result<Molecule, Error> {
    let s = d / (2.0 * 2f64.sqrt());
    Molecule::new(
        vec![z; 4],
        vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fd_forces(spec: &PotentialSpec, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut xp = x.to_vec();
                xp[k] += h;
                let mut xm = x.to_vec();
                xm[k] -= h;
                -(oracle_eval(spec, &xp).unwrap().energy - oracle_eval(spec, &xm).unwrap().energy) / (2.0 * h)
            })
            .collect()
    }

    fn all_specs() -> Vec<PotentialSpec> {
        vec![
            PotentialSpec::HarmonicBond { k: 5.0, r0: 1.1 },
            PotentialSpec::Morse { de: 4.0, a: 1.5, r0: 1.2 },
            PotentialSpec::LennardJones { epsilon: 1.0, sigma: 1.0 },
        ]
    }

    fn random_cluster(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let base = [[0.0, 0.0, 0.0], [1.1, 0.0, 0.0], [0.3, 1.0, 0.0], [0.4, 0.3, 1.0]];
        (0..n).flat_map(|i| base[i].map(|v| v + rng.random_range(-0.1..0.1))).collect()
    }

    #[test]
    fn harmonic_bond_at_rest_length() {
        let spec = PotentialSpec::HarmonicBond { k: 3.0, r0: 1.0 };
        let e = oracle_eval(&spec, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(e.forces.iter().all(|f| f.abs() < 1e-15));
        let eig = e.hessian.symmetric_eigenvalues();
        let mut v: Vec<f64> = eig.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        assert!(v[..5].iter().all(|x| x.abs() < 1e-12));
        assert!((v[5] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn lj_force_vanishes_at_minimum() {
        let spec = PotentialSpec::LennardJones { epsilon: 0.7, sigma: 2.0 };
        let r = spec.equilibrium_distance().unwrap();
        let e = oracle_eval(&spec, &[0.0, 0.0, 0.0, r, 0.0, 0.0]).unwrap();
        assert!(e.forces.iter().all(|f| f.abs() < 1e-14));
        assert!((e.energy + 0.7).abs() < 1e-14);
    }

    #[test]
    fn forces_are_negative_energy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in all_specs() {
            let x = random_cluster(&mut rng, 4);
            let e = oracle_eval(&spec, &x).unwrap();
            let fd = fd_forces(&spec, &x, 1e-5);
            let scale = e.forces.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in e.forces.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-7 * scale, "{spec:?}: {a} vs {b}");
            }
        }
        let spec = PotentialSpec::GenericNd {
            surface: Surface::MullerBrown,
        };
        let x = [-0.3, 0.9];
        let e = oracle_eval(&spec, &x).unwrap();
        let fd = fd_forces(&spec, &x, 1e-6);
        for (a, b) in e.forces.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn morse_trimer_hessian_matches_fd_of_forces() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = PotentialSpec::Morse { de: 4.0, a: 1.5, r0: 1.2 };
        let x = random_cluster(&mut rng, 3);
        let e = oracle_eval(&spec, &x).unwrap();
        let fd = fd_hessian(|y| Ok(oracle_eval(&spec, y)?.forces), &x, 1e-4).unwrap();
        assert!((fd.matrix - &e.hessian).amax() < 1e-6 * e.hessian.amax());
    }

    #[test]
    fn hessians_obey_sum_rule_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in all_specs() {
            let x = random_cluster(&mut rng, 4);
            let e = oracle_eval(&spec, &x).unwrap();
            for i in 0..4 {
                let mut s = Matrix3::zeros();
                for j in 0..4 {
                    s += e.hessian.fixed_view::<3, 3>(3 * i, 3 * j);
                }
                assert!(s.amax() < 1e-10);
            }
            let q = crate::irreps::Rotation::random(&mut rng);
            let xr: Vec<f64> = x.chunks(3).flat_map(|c| q.apply([c[0], c[1], c[2]])).collect();
            let er = oracle_eval(&spec, &xr).unwrap();
            let mut big = DMatrix::zeros(12, 12);
            for i in 0..4 {
                big.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(q.matrix());
            }
            let expected = &big * &e.hessian * big.transpose();
            assert!((er.hessian - expected).amax() < 1e-10 * e.hessian.amax().max(1.0));
        }
    }

    #[test]
    fn double_well_stationary_points() {
        let s = Surface::DoubleWell {
            dim: 3,
            height: 1.0,
            coupling: 0.5,
            stiffness: 2.0,
        };
        let spec = PotentialSpec::GenericNd { surface: s };
        for x in [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -0.5, 0.0]] {
            let e = oracle_eval(&spec, &x).unwrap();
            assert!(e.forces.iter().all(|f| f.abs() < 1e-14));
        }
        let saddle = oracle_eval(&spec, &[0.0, -0.5, 0.0]).unwrap();
        assert!((saddle.hessian[(0, 0)] + 4.0).abs() < 1e-14);
        let x = [0.3, 0.2, -0.4];
        let e = oracle_eval(&spec, &x).unwrap();
        let fd = fd_hessian(|y| Ok(oracle_eval(&spec, y)?.forces), &x, 1e-4).unwrap();
        assert!((fd.matrix - e.hessian).amax() < 1e-7);
    }

    #[test]
    fn fd_exact_for_harmonic() {
        let spec = PotentialSpec::GenericNd {
            surface: Surface::Quadratic {
                matrix: vec![vec![2.0, 0.5], vec![0.5, 1.0]],
                center: vec![0.1, -0.2],
            },
        };
        for h in [1e-3, 0.1, 1.0] {
            let fd = fd_hessian(|y| Ok(oracle_eval(&spec, y)?.forces), &[0.7, 0.3], h).unwrap();
            assert!((fd.matrix - DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).amax() < 1e-9);
        }
    }

    #[test]
    fn fd_rejects_non_finite_forces() {
        let err = fd_hessian(|_| Ok(vec![f64::NAN; 3]), &[0.0; 3], 1e-3).unwrap_err();
        assert!(err.to_string().contains("coordinate 0"));
    }

    #[test]
    fn dataset_noise_and_determinism() {
        let spec = PotentialSpec::LennardJones { epsilon: 1.0, sigma: 3.0 };
        let reference = tetrahedron(18, spec.equilibrium_distance().unwrap()).unwrap();
        let still = gen_dataset(&spec, &reference, 3, 0.0, 1).unwrap();
        assert!(still.iter().all(|s| s.molecule == reference));
        let a = gen_dataset(&spec, &reference, 1000, 0.1, 7).unwrap();
        let b = gen_dataset(&spec, &reference, 5, 0.1, 7).unwrap();
        assert_eq!(a[..5].iter().map(|s| s.energy).collect::<Vec<_>>(), b.iter().map(|s| s.energy).collect::<Vec<_>>());
        let x0 = reference.flat_positions();
        let mut ss = 0.0;
        let mut count = 0.0;
        for s in &a {
            for (p, q) in s.molecule.flat_positions().iter().zip(&x0) {
                ss += (p - q).powi(2);
                count += 1.0;
            }
        }
        let rms = (ss / count).sqrt();
        assert!((rms / 0.1 - 1.0).abs() < 0.05, "rms {rms}");
    }
}
