//! Mass weighting, Eckart projection, frequencies, zero-point energy and
//! stationary-point classification.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::molecule::Molecule;
use crate::training::sorted_eigen;
use crate::units;
use crate::Error;

/// Default magnitude below which a negative eigenvalue counts as zero,
/// in eV/(A^2 amu).
pub const NEG_THRESHOLD: f64 = 1e-4;

/// `M^-1/2 H M^-1/2` with per-atom `masses` repeated over x, y, z.
pub fn mass_weight(h: &DMatrix<f64>, masses: &[f64]) -> Result<DMatrix<f64>, Error> {
    if h.nrows() != 3 * masses.len() || h.ncols() != h.nrows() {
        return Err(Error::ShapeMismatch {
            expected: 3 * masses.len(),
            got: h.nrows(),
        });
    }
    let inv: Vec<f64> = masses.iter().flat_map(|m| [1.0 / m.sqrt(); 3]).collect();
    Ok(DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * inv[i] * inv[j]))
}

/// Orthonormal rigid-body vectors (columns, `3N x d`) in mass-weighted
/// coordinates: three translations and the non-vanishing rotations about
/// the principal axes.
pub fn eckart_basis(mol: &Molecule) -> DMatrix<f64> {
    let n = mol.len();
    let m = mol.masses();
    let total: f64 = m.iter().sum();
    let com = mol
        .positions()
        .iter()
        .zip(m)
        .fold(Vector3::zeros(), |acc, (p, mi)| acc + Vector3::from(*p) * *mi)
        / total;
    let r: Vec<Vector3<f64>> = mol.positions().iter().map(|p| Vector3::from(*p) - com).collect();
    let mut inertia = Matrix3::zeros();
    for (ri, mi) in r.iter().zip(m) {
        inertia += (Matrix3::identity() * ri.norm_squared() - ri * ri.transpose()) * *mi;
    }
    let axes = SymmetricEigen::new(inertia).eigenvectors;
    let extent = r.iter().map(|v| v.amax()).fold(0.0, f64::max);
    let drop_below = 1e-8 * total.sqrt() * extent.max(1e-6);

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(6);
    for a in 0..3 {
        let mut t = vec![0.0; 3 * n];
        for i in 0..n {
            t[3 * i + a] = m[i].sqrt();
        }
        cols.push(t);
    }
    for k in 0..3 {
        let axis = axes.column(k).into_owned();
        let v: Vec<f64> = r
            .iter()
            .zip(m)
            .flat_map(|(ri, mi)| {
                let c = axis.cross(ri) * mi.sqrt();
                [c.x, c.y, c.z]
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > drop_below && norm > 0.0 {
            cols.push(v);
        }
    }
    let raw = DMatrix::from_fn(3 * n, cols.len(), |i, j| cols[j][i]);
    let q = raw.qr().q();
    q.columns(0, cols.len()).into_owned()
}

/// Hessian restricted to the vibrational subspace.
#[derive(Debug, Clone)]
pub struct ProjectedHessian {
    /// `(3N - d) x (3N - d)`, eV/(A^2 amu).
    pub matrix: DMatrix<f64>,
    /// `(3N - d) x 3N`, orthonormal rows spanning the complement of the
    /// rigid-body vectors.
    pub basis: DMatrix<f64>,
    /// Number of removed rigid-body modes.
    pub removed: usize,
}

/// Project a mass-weighted Hessian onto the complement of `rigid`
/// (columns), with the complement taken from an SVD nullspace.
pub fn eckart_project(hw: &DMatrix<f64>, rigid: &DMatrix<f64>) -> Result<ProjectedHessian, Error> {
    let n = hw.nrows();
    let d = rigid.ncols();
    if rigid.nrows() != n || hw.ncols() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: rigid.nrows(),
        });
    }
    // rows of the padded matrix are the rigid-body vectors
    let mut padded = DMatrix::zeros(n, n);
    padded.rows_mut(0, d).copy_from(&rigid.transpose());
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let null: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= 1e-10 * smax.max(1e-300)).collect();
    if null.len() != n - d {
        return Err(Error::Numerical(format!(
            "rigid-body vectors have rank {}, expected {d}",
            n - null.len()
        )));
    }
    let basis = DMatrix::from_fn(null.len(), n, |r, c| vt[(null[r], c)]);
    let proj = &basis * hw * basis.transpose();
    let matrix = (&proj + proj.transpose()) * 0.5;
    Ok(ProjectedHessian {
        matrix,
        basis,
        removed: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Minimum,
    #[serde(rename = "ts_order_1")]
    TsOrder1,
    #[serde(rename = "ts_order_n")]
    TsOrderN,
    Unconverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VibrationalReport {
    /// Ascending, eV/(A^2 amu).
    pub eigenvalues: Vec<f64>,
    /// Angular frequencies in rad/s; imaginary modes are negative.
    pub frequencies: Vec<f64>,
    pub frequencies_invcm: Vec<f64>,
    pub n_negative: usize,
    pub classification: Classification,
    #[serde(rename = "zpe_eV")]
    pub zpe_ev: f64,
}

fn signed_omega(lambda: f64) -> f64 {
    let w = (lambda.abs() * units::curvature_to_s2()).sqrt();
    if lambda < 0.0 {
        -w
    } else {
        w
    }
}

/// `hbar/2 sum sqrt(lambda C)` over strictly positive eigenvalues, in eV.
pub fn zpe_from_eigenvalues(values: &[f64]) -> f64 {
    0.5 * units::hbar_ev_s() * values.iter().filter(|&&l| l > 0.0).map(|&l| signed_omega(l)).sum::<f64>()
}

pub fn zpe(proj: &ProjectedHessian) -> f64 {
    zpe_from_eigenvalues(&sorted_eigen(&proj.matrix).values)
}

/// Classification by the number of eigenvalues below `-neg_threshold`.
pub fn classify(proj: &ProjectedHessian, neg_threshold: f64) -> VibrationalReport {
    report_from_matrix(&proj.matrix, neg_threshold)
}

/// Report for an already projected (or flat, unprojected) curvature matrix.
pub fn report_from_matrix(m: &DMatrix<f64>, neg_threshold: f64) -> VibrationalReport {
    let values = sorted_eigen(m).values;
    let n_negative = values.iter().filter(|&&l| l < -neg_threshold.abs()).count();
    let classification = match n_negative {
        0 => Classification::Minimum,
        1 => Classification::TsOrder1,
        _ => Classification::TsOrderN,
    };
    let frequencies: Vec<f64> = values.iter().map(|&l| signed_omega(l)).collect();
    VibrationalReport {
        frequencies_invcm: frequencies.iter().map(|&w| units::angular_to_wavenumber(w)).collect(),
        frequencies,
        n_negative,
        classification,
        zpe_ev: zpe_from_eigenvalues(&values),
        eigenvalues: values,
    }
}

/// Mass-weight, Eckart-project and classify a Cartesian Hessian (eV/A^2).
pub fn analyze(mol: &Molecule, h: &DMatrix<f64>, neg_threshold: f64) -> Result<(ProjectedHessian, VibrationalReport), Error> {
    let hw = mass_weight(h, mol.masses())?;
    let proj = eckart_project(&hw, &eckart_basis(mol))?;
    let report = classify(&proj, neg_threshold);
    Ok((proj, report))
}

/// `ZPE(reactant) - ZPE(product)`.
pub fn delta_zpe(reactant: &ProjectedHessian, product: &ProjectedHessian) -> f64 {
    zpe(reactant) - zpe(product)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{oracle_eval, PotentialSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn water() -> Molecule {
        Molecule::new(vec![8, 1, 1], vec![[0.0, 0.0, 0.0], [0.757, 0.586, 0.0], [-0.757, 0.586, 0.0]]).unwrap()
    }

    #[test]
    fn mass_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(mass_weight(&h, &[1.0, 1.0]).unwrap(), h);
        assert!((mass_weight(&h, &[4.0, 4.0]).unwrap() - &h / 4.0).amax() < 1e-15);
        let m = [2.5, 7.0];
        let w = mass_weight(&h, &m).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let oracle = h[(i, j)] / (m[i / 3] * m[j / 3]).sqrt();
                assert!((w[(i, j)] - oracle).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn basis_sizes() {
        let diatomic = Molecule::new(vec![1, 1], vec![[0.0; 3], [0.0, 0.0, 0.74]]).unwrap();
        assert_eq!(eckart_basis(&diatomic).ncols(), 5);
        let b = eckart_basis(&water());
        assert_eq!(b.ncols(), 6);
        assert!((b.transpose() * &b - DMatrix::identity(6, 6)).amax() < 1e-10);
        let atom = Molecule::new(vec![6], vec![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(eckart_basis(&atom).ncols(), 3);
    }

    #[test]
    fn harmonic_diatomic_keeps_one_mode() {
        let spec = PotentialSpec::HarmonicBond { k: 10.0, r0: 1.0 };
        let mol = Molecule::new(vec![1, 9], vec![[0.0; 3], [0.3, -0.4, 0.866_025_403_784_438_6]]).unwrap();
        let e = oracle_eval(&spec, &mol.flat_positions()).unwrap();
        let (proj, rep) = analyze(&mol, &e.hessian, NEG_THRESHOLD).unwrap();
        assert_eq!(proj.matrix.nrows(), 1);
        assert_eq!(rep.classification, Classification::Minimum);
        let (m1, m2) = (mol.masses()[0], mol.masses()[1]);
        let mu = m1 * m2 / (m1 + m2);
        assert!((proj.matrix[(0, 0)] / (10.0 / mu) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn translations_are_null_vectors() {
        let spec = PotentialSpec::Morse { de: 3.0, a: 1.2, r0: 1.0 };
        let mol = water();
        let hw = mass_weight(&oracle_eval(&spec, &mol.flat_positions()).unwrap().hessian, mol.masses()).unwrap();
        let b = eckart_basis(&mol);
        for a in 0..3 {
            assert!((&hw * b.column(a)).norm() < 1e-8);
        }
    }

    #[test]
    fn projected_spectrum_matches_nonzero_spectrum_at_minimum() {
        let spec = PotentialSpec::HarmonicBond { k: 5.0, r0: 1.0 };
        let s = 0.5;
        let h = 0.75f64.sqrt();
        let mol = Molecule::new(vec![6, 7, 8], vec![[-s, 0.0, 0.0], [s, 0.0, 0.0], [0.0, h, 0.0]]).unwrap();
        let e = oracle_eval(&spec, &mol.flat_positions()).unwrap();
        let hw = mass_weight(&e.hessian, mol.masses()).unwrap();
        let (proj, _) = analyze(&mol, &e.hessian, NEG_THRESHOLD).unwrap();
        let full: Vec<f64> = sorted_eigen(&hw).values.into_iter().filter(|v| v.abs() > 1e-9).collect();
        let p = sorted_eigen(&proj.matrix).values;
        assert_eq!(full.len(), p.len());
        for (a, b) in full.iter().zip(&p) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zpe_zero_for_flat_spectrum() {
        assert_eq!(zpe_from_eigenvalues(&[0.0, 0.0, -1.0]), 0.0);
    }

    #[test]
    fn classification_counts_negative_modes() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-2.0, 1.0, 3.0]));
        assert_eq!(report_from_matrix(&m, NEG_THRESHOLD).classification, Classification::TsOrder1);
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-2.0, -1.0, 3.0]));
        let r = report_from_matrix(&m, NEG_THRESHOLD);
        assert_eq!((r.classification, r.n_negative), (Classification::TsOrderN, 2));
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1e-6, 1.0]));
        assert_eq!(report_from_matrix(&m, NEG_THRESHOLD).classification, Classification::Minimum);
    }

    #[test]
    fn report_json_keys() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0]));
        let v = serde_json::to_value(report_from_matrix(&m, NEG_THRESHOLD)).unwrap();
        for key in ["eigenvalues", "frequencies_invcm", "n_negative", "classification", "zpe_eV"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["classification"], "minimum");
    }
}
