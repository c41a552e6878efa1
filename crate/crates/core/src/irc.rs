//! Intrinsic reaction coordinate: mass-weighted steepest-descent paths from
//! a first-order saddle toward the adjacent minima.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::optim::bfgs_update;
use crate::potential::Potential;
use crate::training::sorted_eigen;
use crate::units;
use crate::vib::{eckart_basis, eckart_project, mass_weight, NEG_THRESHOLD};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrcConfig {
    /// Mass-weighted arc length per step, sqrt(amu) A.
    pub step_size: f64,
    pub max_steps: usize,
    /// Stop once the Cartesian gradient RMS drops below this, eV/A.
    pub grad_rms_stop: f64,
    /// Allowed energy rise per step, eV.
    pub energy_tol: f64,
    pub max_halvings: usize,
    /// Initial displacement along the imaginary mode, sqrt(amu) A.
    pub displacement: f64,
}

impl Default for IrcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            max_steps: 1000,
            grad_rms_stop: 1.7e-3 * units::hartree_per_bohr_ev_per_angstrom(),
            energy_tol: 1e-6,
            max_halvings: 5,
            displacement: 0.05,
        }
    }
}

impl IrcConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.step_size > 0.0 && self.grad_rms_stop > 0.0 && self.energy_tol >= 0.0 && self.displacement >= 0.0) {
            return Err(Error::InvalidConfig("IRC step, stop threshold and displacement must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrcFrame {
    pub x: Vec<f64>,
    pub energy: f64,
    /// Accumulated mass-weighted arc length.
    pub arc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrcPath {
    pub direction: Direction,
    pub frames: Vec<IrcFrame>,
    pub converged: bool,
    pub aborted: Option<String>,
    pub matched_minimum: Option<usize>,
}

impl IrcPath {
    pub fn terminal(&self) -> &[f64] {
        &self.frames.last().expect("path holds its start").x
    }

    /// Index of the first minimum within `tol` RMSD of the terminal geometry.
    pub fn match_minimum(&mut self, minima: &[Vec<f64>], tol: f64) -> Option<usize> {
        self.matched_minimum = minima.iter().position(|m| rmsd(m, self.terminal()) < tol);
        self.matched_minimum
    }
}

/// Root-mean-square deviation over flat coordinates.
pub fn rmsd(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}

fn sqrt_masses(p: &dyn Potential, x: &[f64]) -> Vec<f64> {
    match p.molecule(x) {
        Some(mol) => mol.masses().iter().flat_map(|m| [m.sqrt(); 3]).collect(),
        None => vec![1.0; x.len()],
    }
}

/// Forward and backward starting geometries displaced by `displacement`
/// along the single imaginary mode of `hessian` (Cartesian, eV/A^2).
pub fn irc_init(p: &dyn Potential, saddle: &[f64], hessian: &DMatrix<f64>, displacement: f64) -> Result<[Vec<f64>; 2], Error> {
    let n = saddle.len();
    let (mode_q, values) = match p.molecule(saddle) {
        Some(mol) => {
            let hw = mass_weight(hessian, mol.masses())?;
            let proj = eckart_project(&hw, &eckart_basis(&mol))?;
            let e = sorted_eigen(&proj.matrix);
            (proj.basis.transpose() * e.vectors.column(0), e.values)
        }
        None => {
            let e = sorted_eigen(hessian);
            (e.vectors.column(0).into_owned(), e.values)
        }
    };
    let n_neg = values.iter().filter(|&&l| l < -NEG_THRESHOLD).count();
    if n_neg != 1 {
        return Err(Error::InvalidConfig(format!("IRC needs exactly one imaginary mode, found {n_neg}")));
    }
    // fix the sign: largest component positive
    let pivot = mode_q.iamax();
    let sign = if mode_q[pivot] < 0.0 { -1.0 } else { 1.0 };
    let sm = sqrt_masses(p, saddle);
    let dx: Vec<f64> = (0..n).map(|i| sign * displacement * mode_q[i] / sm[i]).collect();
    let fwd = saddle.iter().zip(&dx).map(|(a, d)| a + d).collect();
    let bwd = saddle.iter().zip(&dx).map(|(a, d)| a - d).collect();
    Ok([fwd, bwd])
}

/// Integrate one branch of the path from `start`.
///
/// Each step takes a predictor along the mass-weighted anti-gradient whose
/// midpoint gradient comes from the local quadratic model, then a trapezoid
/// corrector on the true gradient at the predicted point. Steps that raise
/// the energy beyond tolerance are halved and retried.
pub fn irc_run(p: &dyn Potential, start: &[f64], hessian_init: &DMatrix<f64>, direction: Direction, cfg: &IrcConfig) -> Result<IrcPath, Error> {
    cfg.validate()?;
    let n = start.len();
    if hessian_init.nrows() != n || hessian_init.ncols() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: hessian_init.nrows(),
        });
    }
    let sm = DVector::from_vec(sqrt_masses(p, start));
    let to_x = |q: &DVector<f64>| -> Vec<f64> { q.component_div(&sm).iter().copied().collect() };
    let eval = |q: &DVector<f64>| -> Result<(f64, DVector<f64>, DVector<f64>), Error> {
        let (e, gx) = p.evaluate(&to_x(q))?;
        if !e.is_finite() {
            return Err(Error::Numerical("non-finite energy on the IRC".into()));
        }
        let gq = gx.component_div(&sm);
        Ok((e, gx, gq))
    };
    let rms = |v: &DVector<f64>| (v.norm_squared() / v.len().max(1) as f64).sqrt();

    let mut hq = DMatrix::from_fn(n, n, |i, j| hessian_init[(i, j)] / (sm[i] * sm[j]));
    let mut q = DVector::from_column_slice(start).component_mul(&sm);
    let (mut e, mut gx, mut gq) = eval(&q)?;
    let mut path = IrcPath {
        direction,
        frames: vec![IrcFrame {
            x: start.to_vec(),
            energy: e,
            arc: 0.0,
        }],
        converged: false,
        aborted: None,
        matched_minimum: None,
    };
    let mut h = cfg.step_size;
    let mut arc = 0.0;
    for _ in 0..cfg.max_steps {
        if rms(&gx) < cfg.grad_rms_stop {
            path.converged = true;
            break;
        }
        let gnorm = gq.norm();
        let d0 = -&gq / gnorm;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            // do not run past the model minimum along the descent direction
            let curv = d0.dot(&(&hq * &d0));
            let len = if curv > 0.0 { h.min(gnorm / curv) } else { h };
            let g_mid = &gq + &hq * (&d0 * (0.5 * len));
            let d_mid = match g_mid.norm() {
                m if m > 0.0 => -&g_mid / m,
                _ => d0.clone(),
            };
            let q_pred = &q + &d_mid * len;
            let (_, _, g_pred) = eval(&q_pred)?;
            let d1 = match g_pred.norm() {
                m if m > 0.0 => -&g_pred / m,
                _ => d0.clone(),
            };
            let avg = &d0 + &d1;
            let dir = match avg.norm() {
                m if m > 1e-12 => avg / m,
                _ => d_mid,
            };
            let q_new = &q + &dir * len;
            let (e_new, gx_new, gq_new) = eval(&q_new)?;
            if e_new <= e + cfg.energy_tol {
                accepted = Some((q_new, e_new, gx_new, gq_new, len));
                break;
            }
            h *= 0.5;
        }
        let Some((q_new, e_new, gx_new, gq_new, len)) = accepted else {
            path.aborted = Some(format!("energy rose after {} step halvings", cfg.max_halvings));
            break;
        };
        let s = &q_new - &q;
        // a skipped update keeps the previous model
        bfgs_update(&mut hq, &s, &(&gq_new - &gq));
        arc += len;
        q = q_new;
        e = e_new;
        gx = gx_new;
        gq = gq_new;
        path.frames.push(IrcFrame { x: to_x(&q), energy: e, arc });
    }
    if !path.converged && path.aborted.is_none() && rms(&gx) < cfg.grad_rms_stop {
        path.converged = true;
    }
    Ok(path)
}

/// Both branches from a saddle, integrated concurrently.
pub fn irc_both(p: &dyn Potential, saddle: &[f64], hessian: &DMatrix<f64>, cfg: &IrcConfig) -> Result<[IrcPath; 2], Error> {
    let [fwd, bwd] = irc_init(p, saddle, hessian, cfg.displacement)?;
    let (a, b) = std::thread::scope(|s| {
        let f = s.spawn(|| irc_run(p, &fwd, hessian, Direction::Forward, cfg));
        let b = irc_run(p, &bwd, hessian, Direction::Backward, cfg);
        (f.join().expect("IRC branch panicked"), b)
    });
    Ok([a?, b?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{PotentialSpec, Surface};
    use crate::potential::OraclePotential;

    fn double_well() -> OraclePotential {
        OraclePotential::new(
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
        .unwrap()
    }

    #[test]
    fn init_is_mirror_symmetric() {
        let p = double_well();
        let s = [0.0, -0.5, 0.0];
        let h = p.oracle_hessian(&s).unwrap();
        let [a, b] = irc_init(&p, &s, &h, 0.05).unwrap();
        assert_eq!(a[0], -b[0]);
        assert!((a[1] - b[1]).abs() < 1e-15);
        assert!(p.evaluate(&a).unwrap().0 < p.evaluate(&s).unwrap().0);
        let [a, b] = irc_init(&p, &s, &h, 0.0).unwrap();
        assert_eq!(a, s.to_vec());
        assert_eq!(b, s.to_vec());
        let hm = p.oracle_hessian(&[1.0, 0.0, 0.0]).unwrap();
        assert!(irc_init(&p, &[1.0, 0.0, 0.0], &hm, 0.05).is_err());
    }

    #[test]
    fn double_well_branches_reach_both_minima() {
        let p = double_well();
        let s = [0.0, -0.5, 0.0];
        let h = p.oracle_hessian(&s).unwrap();
        let cfg = IrcConfig::default();
        let [mut f, mut b] = irc_both(&p, &s, &h, &cfg).unwrap();
        let minima = vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]];
        assert!(f.converged && b.converged);
        assert!(f.match_minimum(&minima, 0.05).is_some());
        assert!(b.match_minimum(&minima, 0.05).is_some());
        assert_ne!(f.matched_minimum, b.matched_minimum);
        for path in [&f, &b] {
            assert!(path.frames.windows(2).all(|w| w[1].energy <= w[0].energy + 1e-6));
        }
        for (a, c) in f.frames.iter().zip(&b.frames) {
            assert!((a.x[0] + c.x[0]).abs() < 1e-8 && (a.x[1] - c.x[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_bowl_reaches_minimum() {
        let p = OraclePotential::new(
            PotentialSpec::GenericNd {
                surface: Surface::Quadratic {
                    matrix: vec![vec![2.0, 0.3], vec![0.3, 1.0]],
                    center: vec![0.0, 0.0],
                },
            },
            None,
        )
        .unwrap();
        let cfg = IrcConfig {
            grad_rms_stop: 1e-6,
            ..Default::default()
        };
        let x0 = [0.8, -0.6];
        let h = p.oracle_hessian(&x0).unwrap();
        let path = irc_run(&p, &x0, &h, Direction::Forward, &cfg).unwrap();
        assert!(path.converged);
        assert!(DVector::from_column_slice(path.terminal()).norm() < 1e-4);
    }
}
