//! SO(3) irreducible-representation algebra: real spherical harmonics,
//! Wigner-D matrices, Clebsch-Gordan coefficients and tensor products.

mod cg;
mod layout;
mod product;
mod sph;
mod wigner;

pub use cg::{clebsch_gordan, CgTensor, SUPPORTED_L_MAX};
pub use layout::{IrrepsLayout, IrrepsTensor, Rotation};
pub use product::{expand_3x3_adjoint, expand_3x3_raw, tensor_expand_3x3, TensorProduct, TpPath};
pub use sph::{cart_to_l1, cartesian_to_l1, l1_to_cart, real_sph_harm, real_sph_harm_all};
pub use wigner::{rotate_irreps, wigner_d, wigner_d_all};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IrrepsError {
    #[error("irreps block of degree {0} has zero channels")]
    EmptyBlock(usize),
    #[error("data length {got} does not match layout dimension {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("matrix is not a proper rotation (|QtQ - I| = {orthogonality:e}, det = {det})")]
    NotARotation { orthogonality: f64, det: f64 },
    #[error("direction has norm {0}, expected a unit vector")]
    NotUnit(f64),
    #[error("degree {0} exceeds the supported maximum")]
    UnsupportedDegree(usize),
    #[error("output degree {0} is not reachable by any coupling path")]
    UnreachableOutput(usize),
    #[error("output layout repeats a degree")]
    DuplicateOutputDegree,
    #[error("input layout does not match")]
    LayoutMismatch,
}
