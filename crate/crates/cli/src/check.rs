//! Quick invariant battery behind the `check` command.

use hessnet_core::irreps::Rotation;
use hessnet_core::model::{Model, ModelConfig};
use hessnet_core::molecule::Molecule;
use hessnet_core::optim::{optimize, OptConfig, TrustConfig};
use hessnet_core::oracles::{fd_hessian, oracle_eval, PotentialSpec, Surface};
use hessnet_core::potential::OraclePotential;
use hessnet_core::training::{grad_params, sample_loss, LossConfig, Prepared, Sample};
use hessnet_core::vib::{eckart_basis, mass_weight};
use hessnet_core::Error;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn row(name: &str, value: f64, tolerance: f64) -> CheckRow {
    CheckRow {
        name: name.into(),
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

fn kron_rot(r: &nalgebra::Matrix3<f64>, n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(3 * n, 3 * n);
    for a in 0..n {
        q.view_mut((3 * a, 3 * a), (3, 3)).copy_from(r);
    }
    q
}

fn test_molecule() -> Result<Molecule, Error> {
    Molecule::new(
        vec![6, 1, 8, 7],
        vec![[0.0, 0.0, 0.0], [1.09, 0.1, -0.05], [-0.3, 1.2, 0.2], [0.2, -0.4, 1.4]],
    )
}

pub fn run_checks(seed: u64) -> Result<Vec<CheckRow>, Error> {
    let mut rows = Vec::new();
    let model = Model::new(ModelConfig::default(), seed)?;
    let mol = test_molecule()?;
    let h = model.predict_hessian(&mol)?.into_matrix();
    rows.push(row("hessian symmetry", (&h - h.transpose()).amax(), 0.0));

    let rot = Rotation::random(&mut ChaCha8Rng::seed_from_u64(seed));
    let hr = model.predict_hessian(&mol.transformed(&rot, [0.4, -1.0, 2.0]))?.into_matrix();
    let q = kron_rot(rot.matrix(), mol.len());
    let expect = &q * &h * q.transpose();
    rows.push(row("rotation equivariance (rel)", (&hr - expect).amax() / h.amax().max(1e-300), 1e-5));

    let spec = PotentialSpec::Morse { de: 2.0, a: 1.0, r0: 1.2 };
    let e = oracle_eval(&spec, &mol.flat_positions())?;
    let sample = Sample {
        molecule: mol.clone(),
        energy: e.energy,
        forces: e.forces.clone(),
        hessian: e.hessian.clone(),
    };
    let cfg = LossConfig::default();
    let prep = Prepared::new(&sample, 1.0);
    let (_, grad, _) = grad_params(&model, &prep, &cfg)?;
    let mut worst: f64 = 0.0;
    let stride = (grad.len() / 16).max(1);
    for idx in (0..grad.len()).step_by(stride) {
        let mut m = model.clone();
        let h0 = m.params().values()[idx];
        m.params_mut().values_mut()[idx] = h0 + 1e-5;
        let lp = sample_loss(&m, &prep, &cfg)?;
        m.params_mut().values_mut()[idx] = h0 - 1e-5;
        let lm = sample_loss(&m, &prep, &cfg)?;
        let fd = (lp - lm) / 2e-5;
        worst = worst.max((fd - grad[idx]).abs() / (fd.abs().max(grad[idx].abs()) + 1e-6));
    }
    rows.push(row("loss gradient vs FD (rel)", worst, 1e-3));

    let fd = fd_hessian(|x| Ok(oracle_eval(&spec, x)?.forces), &mol.flat_positions(), 1e-3)?;
    rows.push(row("oracle FD Hessian (rel)", (&fd.matrix - &e.hessian).amax() / e.hessian.amax(), 1e-6));

    let hw = mass_weight(&e.hessian, mol.masses())?;
    let b = eckart_basis(&mol);
    let resid = (0..3).map(|a| (&hw * b.column(a)).norm()).fold(0.0, f64::max);
    rows.push(row("Eckart translation residual", resid, 1e-8));

    let quad = OraclePotential::new(
        PotentialSpec::GenericNd {
            surface: Surface::Quadratic {
                matrix: vec![vec![2.0, 0.5, 0.0], vec![0.5, 1.0, 0.1], vec![0.0, 0.1, 3.0]],
                center: vec![0.1, -0.2, 0.3],
            },
        },
        None,
    )?;
    let ocfg = OptConfig {
        trust: TrustConfig {
            initial: 10.0,
            max: 10.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let res = optimize(&quad, &[1.0, 1.0, 1.0], &ocfg)?;
    let steps = if res.converged { res.steps as f64 } else { f64::INFINITY };
    rows.push(row("RFO steps on quadratic", steps, 2.0));
    Ok(rows)
}

pub fn format_table(rows: &[CheckRow]) -> String {
    let mut out = format!("{:<32} {:>12} {:>10}  {}\n", "check", "value", "tolerance", "status");
    for r in rows {
        out += &format!(
            "{:<32} {:>12.3e} {:>10.1e}  {}\n",
            r.name,
            r.value,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes() {
        let rows = run_checks(0).unwrap();
        assert!(rows.iter().all(|r| r.pass), "{}", format_table(&rows));
    }
}
