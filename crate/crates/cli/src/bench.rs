//! Timing of direct Hessian prediction against finite differences of the
//! model's own forces.

use std::time::Instant;

use hessnet_core::model::Model;
use hessnet_core::molecule::Molecule;
use hessnet_core::oracles::{fd_hessian, DEFAULT_FD_STEP};
use hessnet_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_atoms: usize,
    pub repeats: usize,
    pub direct_ms: f64,
    pub fd_ms: f64,
    pub ratio: f64,
    pub edges: usize,
    /// Matrix and feature elements allocated by one direct prediction.
    pub direct_elements: usize,
    /// Elements allocated by the finite-difference baseline.
    pub fd_elements: usize,
}

/// Jittered simple-cubic cluster with 1.5 A spacing.
pub fn bench_molecule(z: u32, n: usize, seed: u64) -> Result<Molecule, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (n as f64).cbrt().ceil() as usize;
    let pos = (0..n)
        .map(|k| {
            let (i, j, l) = (k % side, (k / side) % side, k / (side * side));
            [i, j, l].map(|c| 1.5 * c as f64 + rng.random_range(-0.2..0.2))
        })
        .collect();
    Molecule::new(vec![z; n], pos)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Finite-difference Hessian from the model's direct force readout
/// (`6N` forward passes).
pub fn model_fd_hessian(model: &Model, mol: &Molecule) -> Result<nalgebra::DMatrix<f64>, Error> {
    let fd = fd_hessian(
        |x| {
            let m = mol.with_flat_positions(x)?;
            Ok(model.forward(&m)?.forces.iter().flatten().copied().collect())
        },
        &mol.flat_positions(),
        DEFAULT_FD_STEP,
    )?;
    Ok(fd.matrix)
}

pub fn bench_size(model: &Model, mol: &Molecule, repeats: usize) -> Result<BenchRow, Error> {
    let repeats = repeats.max(1);
    let n = mol.len();
    let mut direct = Vec::with_capacity(repeats);
    let mut fd = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(model.predict_hessian(mol)?);
        direct.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        std::hint::black_box(model_fd_hessian(model, mol)?);
        fd.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let edges = model.graph(mol)?.edges.len();
    let cfg = model.config();
    let node_dim = cfg.node_layout().dim();
    let pair_dim = cfg.pair_layout().dim();
    let passes = cfg.layers + cfg.head_layers + 1;
    let hess = 9 * n * n;
    let direct_elements = hess + n * node_dim * passes + edges * pair_dim + n * pair_dim;
    let fd_elements = hess + 6 * n * (3 * n + n * node_dim * (cfg.layers + 1));
    let (direct_ms, fd_ms) = (median(&mut direct), median(&mut fd));
    Ok(BenchRow {
        n_atoms: n,
        repeats,
        direct_ms,
        fd_ms,
        ratio: fd_ms / direct_ms,
        edges,
        direct_elements,
        fd_elements,
    })
}

pub fn bench(model: &Model, z: u32, sizes: &[usize], repeats: usize, seed: u64) -> Result<Vec<BenchRow>, Error> {
    sizes
        .iter()
        .map(|&n| bench_size(model, &bench_molecule(z, n, seed.wrapping_add(n as u64))?, repeats))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use hessnet_core::model::ModelConfig;

    #[test]
    fn molecules_are_valid_and_connected() {
        let m = bench_molecule(6, 20, 0).unwrap();
        assert_eq!(m.len(), 20);
        for i in 0..20 {
            for j in 0..i {
                assert!(m.distance(i, j) > 0.9);
            }
        }
    }

    #[test]
    fn fd_slower_than_direct() {
        let model = Model::new(ModelConfig::default(), 0).unwrap();
        let row = bench_size(&model, &bench_molecule(6, 4, 1).unwrap(), 1).unwrap();
        assert!(row.ratio > 1.0, "{row:?}");
        assert!(row.fd_elements > row.direct_elements / 10);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
