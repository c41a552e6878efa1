//! Energy surfaces consumed by the optimizers and the IRC integrator.

use nalgebra::{DMatrix, DVector};

use crate::model::Model;
use crate::molecule::Molecule;
use crate::oracles::{fd_hessian, oracle_eval, PotentialSpec, DEFAULT_FD_STEP};
use crate::vib::{self, VibrationalReport};
use crate::Error;

pub trait Potential: Sync {
    fn dim(&self) -> usize;

    /// Energy and gradient at flat coordinates `x`.
    fn evaluate(&self, x: &[f64]) -> Result<(f64, DVector<f64>), Error>;

    /// Closed-form Hessian, when the surface has one.
    fn oracle_hessian(&self, _x: &[f64]) -> Result<DMatrix<f64>, Error> {
        Err(Error::InvalidConfig("this potential has no analytic Hessian".into()))
    }

    /// Hessian predicted by a learned model, when one is attached.
    fn model_hessian(&self, _x: &[f64]) -> Result<DMatrix<f64>, Error> {
        Err(Error::InvalidConfig("no model attached to this potential".into()))
    }

    /// Central differences of the gradient.
    fn fd_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, Error> {
        let fd = fd_hessian(
            |y| Ok(self.evaluate(y)?.1.iter().map(|v| -v).collect()),
            x,
            DEFAULT_FD_STEP,
        )?;
        Ok(fd.matrix)
    }

    /// Molecule at `x`, for Eckart projection. `None` for abstract surfaces,
    /// which are analyzed unprojected with unit masses.
    fn molecule(&self, _x: &[f64]) -> Option<Molecule> {
        None
    }

    /// Most accurate Hessian available: analytic, else finite differences.
    fn reference_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, Error> {
        match self.oracle_hessian(x) {
            Ok(h) => Ok(h),
            Err(Error::InvalidConfig(_)) => self.fd_hessian(x),
            Err(e) => Err(e),
        }
    }
}

/// Vibrational report at `x` from the potential's reference Hessian.
pub fn analyze_at(p: &dyn Potential, x: &[f64], neg_threshold: f64) -> Result<VibrationalReport, Error> {
    let h = p.reference_hessian(x)?;
    analyze_hessian(p, x, &h, neg_threshold)
}

pub fn analyze_hessian(p: &dyn Potential, x: &[f64], h: &DMatrix<f64>, neg_threshold: f64) -> Result<VibrationalReport, Error> {
    match p.molecule(x) {
        Some(mol) => Ok(vib::analyze(&mol, h, neg_threshold)?.1),
        None => Ok(vib::report_from_matrix(h, neg_threshold)),
    }
}

/// Analytic oracle surface. Pairwise potentials need a template molecule
/// for species and masses.
#[derive(Debug, Clone)]
pub struct OraclePotential {
    spec: PotentialSpec,
    template: Option<Molecule>,
}

impl OraclePotential {
    pub fn new(spec: PotentialSpec, template: Option<Molecule>) -> Result<Self, Error> {
        spec.validate()?;
        if spec.is_pairwise() && template.is_none() {
            return Err(Error::InvalidConfig("pairwise potentials need a molecule".into()));
        }
        if let PotentialSpec::GenericNd { surface } = &spec {
            if let Some(t) = &template {
                if 3 * t.len() != surface.dim() {
                    return Err(Error::ShapeMismatch {
                        expected: surface.dim(),
                        got: 3 * t.len(),
                    });
                }
            }
        }
        Ok(Self { spec, template })
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn template(&self) -> Option<&Molecule> {
        self.template.as_ref()
    }
}

impl Potential for OraclePotential {
    fn dim(&self) -> usize {
        match (&self.spec, &self.template) {
            (PotentialSpec::GenericNd { surface }, _) => surface.dim(),
            (_, Some(t)) => 3 * t.len(),
            (_, None) => 0,
        }
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, DVector<f64>), Error> {
        let e = oracle_eval(&self.spec, x)?;
        if !e.energy.is_finite() {
            return Err(Error::Numerical("non-finite energy".into()));
        }
        Ok((e.energy, DVector::from_iterator(x.len(), e.forces.iter().map(|f| -f))))
    }

    fn oracle_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, Error> {
        Ok(oracle_eval(&self.spec, x)?.hessian)
    }

    fn molecule(&self, x: &[f64]) -> Option<Molecule> {
        if self.spec.is_pairwise() {
            self.template.as_ref().and_then(|t| t.with_flat_positions(x).ok())
        } else {
            None
        }
    }
}

/// Oracle energies and forces with Hessians predicted by a model.
pub struct ModelAssisted<'a> {
    pub oracle: OraclePotential,
    pub model: &'a Model,
}

impl Potential for ModelAssisted<'_> {
    fn dim(&self) -> usize {
        self.oracle.dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, DVector<f64>), Error> {
        self.oracle.evaluate(x)
    }

    fn oracle_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, Error> {
        self.oracle.oracle_hessian(x)
    }

    fn model_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, Error> {
        let mol = self
            .oracle
            .molecule(x)
            .ok_or_else(|| Error::InvalidConfig("model Hessians need a molecular potential".into()))?;
        Ok(self.model.predict_hessian(&mol)?.into_matrix())
    }

    fn molecule(&self, x: &[f64]) -> Option<Molecule> {
        self.oracle.molecule(x)
    }
}
