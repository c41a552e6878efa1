//! Hessian readout: pair features, degree projection, 3x3 block expansion
//! and symmetric assembly.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::irreps::{IrrepsLayout, IrrepsTensor};
use crate::Error;

/// Dense symmetric 3N x 3N Hessian in eV/A^2.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    n_atoms: usize,
    data: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct HessianJson {
    n_atoms: usize,
    units: String,
    matrix: serde_json::Value,
}

impl HessianMatrix {
    /// Wrap a matrix, symmetrizing it as `(M + M^T) / 2`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self, Error> {
        if m.nrows() != m.ncols() || !m.nrows().is_multiple_of(3) || m.nrows() == 0 {
            return Err(Error::InvalidConfig(format!(
                "Hessian must be 3N x 3N, got {} x {}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Hessian entry".into()));
        }
        let data = (&m + m.transpose()) * 0.5;
        Ok(Self {
            n_atoms: m.nrows() / 3,
            data,
        })
    }

    /// Wrap a matrix that is already exactly symmetric.
    pub(crate) fn from_symmetric(data: DMatrix<f64>) -> Self {
        debug_assert!(data == data.transpose());
        Self {
            n_atoms: data.nrows() / 3,
            data,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn block(&self, i: usize, j: usize) -> Matrix3<f64> {
        self.data.fixed_view::<3, 3>(3 * i, 3 * j).into_owned()
    }

    /// `max_I |sum_J H_IJ|`: zero for any translation-invariant energy.
    pub fn acoustic_sum_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_atoms {
            let mut s = Matrix3::zeros();
            for j in 0..self.n_atoms {
                s += self.block(i, j);
            }
            worst = worst.max(s.amax());
        }
        worst
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = self.data.row_iter().map(|r| r.iter().copied().collect()).collect();
        serde_json::to_value(HessianJson {
            n_atoms: self.n_atoms,
            units: "eV/A^2".into(),
            matrix: serde_json::to_value(rows).expect("plain numbers"),
        })
        .expect("plain struct")
    }

    /// Accepts `matrix` as nested rows or as a flat row-major array.
    pub fn from_json(v: &serde_json::Value) -> Result<Self, Error> {
        let h: HessianJson = serde_json::from_value(v.clone())?;
        let n = 3 * h.n_atoms;
        let flat = flat_matrix(&h.matrix)?;
        if flat.len() != n * n {
            return Err(Error::ShapeMismatch {
                expected: n * n,
                got: flat.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(n, n, &flat))
    }
}

/// Row-major entries from either `[[..], ..]` or `[..]`.
pub fn flat_matrix(v: &serde_json::Value) -> Result<Vec<f64>, Error> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::InvalidConfig("matrix must be an array".into()))?;
    let mut out = Vec::new();
    for r in rows {
        match r {
            serde_json::Value::Array(cols) => {
                for c in cols {
                    out.push(c.as_f64().ok_or_else(|| Error::InvalidConfig("non-numeric matrix entry".into()))?);
                }
            }
            other => out.push(
                other
                    .as_f64()
                    .ok_or_else(|| Error::InvalidConfig("non-numeric matrix entry".into()))?,
            ),
        }
    }
    Ok(out)
}

/// Feature of the directed atom pair `(i, j)`; `i == j` marks a diagonal.
#[derive(Debug, Clone)]
pub struct PairFeature {
    pub i: usize,
    pub j: usize,
    pub feature: IrrepsTensor,
}

/// Per-degree channel contraction to `1x0e + 1x1e + 1x2e`.
///
/// `weights` holds three rows (degrees 0, 1, 2) of `channels` entries where
/// `channels` is the channel count of the input blocks.
pub fn project_irreps(f: &IrrepsTensor, weights: &[f64]) -> Result<IrrepsTensor, Error> {
    let layout = f.layout();
    let mut out = [0.0; 9];
    let mut offset = 0;
    for l in 0..=2 {
        let blk = layout
            .find_degree(l)
            .ok_or_else(|| Error::InvalidConfig(format!("pair feature lacks degree {l}")))?;
        let c = layout.blocks()[blk].1;
        if weights.len() != 3 * c {
            return Err(Error::ShapeMismatch {
                expected: 3 * c,
                got: weights.len(),
            });
        }
        for ch in 0..c {
            let w = weights[l * c + ch];
            for (m, v) in f.component(blk, ch).iter().enumerate() {
                out[offset + m] += w * v;
            }
        }
        offset += 2 * l + 1;
    }
    Ok(IrrepsTensor::new(IrrepsLayout::cartesian_3x3(), out.to_vec())?)
}

/// Adjoint of [`project_irreps`] for fixed `f`: accumulates weight and input
/// gradients from `dL/d out`.
pub(crate) fn project_backward(f: &IrrepsTensor, weights: &[f64], g_out: &[f64; 9], g_w: &mut [f64], g_f: &mut [f64]) {
    let layout = f.layout();
    let mut offset = 0;
    for l in 0..=2 {
        let blk = layout.find_degree(l).expect("checked in forward");
        let c = layout.blocks()[blk].1;
        let d = 2 * l + 1;
        let go = &g_out[offset..offset + d];
        for ch in 0..c {
            let comp = f.component(blk, ch);
            g_w[l * c + ch] += comp.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
            let start = layout.offset(blk) + ch * d;
            let w = weights[l * c + ch];
            for m in 0..d {
                g_f[start + m] += w * go[m];
            }
        }
        offset += d;
    }
}

/// 3x3 block of a projected pair feature.
pub fn pair_block(f: &IrrepsTensor) -> Result<Matrix3<f64>, Error> {
    Ok(crate::irreps::tensor_expand_3x3(f)?)
}

/// 3x3 self block of a node feature projected with its own weights.
pub fn diagonal_block(node_feature: &IrrepsTensor, weights: &[f64]) -> Result<Matrix3<f64>, Error> {
    pair_block(&project_irreps(node_feature, weights)?)
}

/// Place blocks into `H'` and return `H' + H'^T`. Blocks for pairs not listed
/// stay zero.
pub fn assemble_hessian(blocks: &[(usize, usize, Matrix3<f64>)], n_atoms: usize) -> Result<HessianMatrix, Error> {
    let mut h = DMatrix::zeros(3 * n_atoms, 3 * n_atoms);
    for (i, j, b) in blocks {
        if *i >= n_atoms || *j >= n_atoms {
            return Err(Error::InvalidConfig(format!("block ({i}, {j}) outside {n_atoms} atoms")));
        }
        let mut v = h.fixed_view_mut::<3, 3>(3 * i, 3 * j);
        v += b;
    }
    Ok(HessianMatrix::from_symmetric(&h + h.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_assembled_dimer() {
        let a = Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        let b = Matrix3::from_fn(|r, c| (r * 3 + c) as f64 * 0.1);
        let d0 = Matrix3::identity() * 2.0;
        let h = assemble_hessian(&[(0, 1, a), (1, 0, b), (0, 0, d0)], 2).unwrap();
        let mut expected = DMatrix::zeros(6, 6);
        for r in 0..3 {
            for c in 0..3 {
                expected[(r, 3 + c)] = a[(r, c)] + b[(c, r)];
                expected[(3 + r, c)] = b[(r, c)] + a[(c, r)];
                expected[(r, c)] = 2.0 * d0[(r, c)];
            }
        }
        assert_eq!(h.matrix(), &expected);
        assert_eq!(h.matrix(), &h.matrix().transpose());
    }

    #[test]
    fn projection_is_linear_and_degree_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layout = IrrepsLayout::uniform(2, 4).unwrap();
        let f = IrrepsTensor::new(layout.clone(), (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = project_irreps(&f, &w).unwrap();
        let mut scaled = f.clone();
        scaled.scale(2.5);
        let out = project_irreps(&scaled, &w).unwrap();
        for (a, b) in out.data().iter().zip(base.data()) {
            assert!((a - 2.5 * b).abs() < 1e-14);
        }
        let mut no_l2 = f.clone();
        let blk = layout.find_degree(2).unwrap();
        for c in 0..4 {
            no_l2.component_mut(blk, c).fill(0.0);
        }
        let out = project_irreps(&no_l2, &w).unwrap();
        assert_eq!(&out.data()[..4], &base.data()[..4]);
        assert!(out.data()[4..].iter().all(|v| *v == 0.0));
        assert!(project_irreps(&f, &[0.0; 12]).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn projection_requires_degree_two() {
        let layout = IrrepsLayout::uniform(1, 2).unwrap();
        assert!(project_irreps(&IrrepsTensor::zeros(layout), &[0.0; 6]).is_err());
    }

    #[test]
    fn block_of_scalar_and_zero_input() {
        let f = IrrepsTensor::new(IrrepsLayout::cartesian_3x3(), vec![1.0, 0., 0., 0., 0., 0., 0., 0., 0.]).unwrap();
        let b = pair_block(&f).unwrap();
        assert!((b - Matrix3::identity() * b[(0, 0)]).amax() < 1e-15);
        assert_eq!(pair_block(&IrrepsTensor::zeros(IrrepsLayout::cartesian_3x3())).unwrap(), Matrix3::zeros());
    }

    #[test]
    fn json_accepts_nested_and_flat() {
        let m = DMatrix::from_fn(3, 3, |r, c| (r + c) as f64);
        let h = HessianMatrix::from_matrix(m).unwrap();
        let back = HessianMatrix::from_json(&h.to_json()).unwrap();
        assert_eq!(back, h);
        let flat = serde_json::json!({"n_atoms": 1, "units": "eV/A^2", "matrix": [0.,1.,2.,1.,2.,3.,2.,3.,4.]});
        assert_eq!(HessianMatrix::from_json(&flat).unwrap(), h);
    }
}
