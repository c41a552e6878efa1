use nalgebra::DMatrix;

use super::cg::{clebsch_gordan, SUPPORTED_L_MAX};
use super::layout::{IrrepsTensor, Rotation};
use super::sph::cartesian_to_l1;

/// Wigner-D matrix of degree `l` in the real spherical-harmonic basis.
///
/// Degree 1 is the rotation conjugated into the `(y, z, x)` basis; higher
/// degrees are built recursively as `D^l = C^T (D^(l-1) x D^1) C` with `C`
/// the `(l-1) x 1 -> l` coupling tensor.
///
/// Panics if `l > SUPPORTED_L_MAX`.
pub fn wigner_d(l: usize, rot: &Rotation) -> DMatrix<f64> {
    assert!(l <= SUPPORTED_L_MAX, "wigner_d: degree {l} unsupported");
    wigner_d_all(l, rot).pop().expect("non-empty")
}

/// Wigner-D matrices for every degree `0..=l_max`.
pub fn wigner_d_all(l_max: usize, rot: &Rotation) -> Vec<DMatrix<f64>> {
    assert!(l_max <= SUPPORTED_L_MAX, "wigner_d: degree {l_max} unsupported");
    let p = cartesian_to_l1();
    let d1 = p * rot.matrix() * p.transpose();
    let d1 = DMatrix::from_iterator(3, 3, d1.iter().copied());
    let mut out = vec![DMatrix::identity(1, 1)];
    if l_max >= 1 {
        out.push(d1.clone());
    }
    for l in 2..=l_max {
        let cg = clebsch_gordan(l - 1, 1, l).expect("supported degree");
        let prev = &out[l - 1];
        let (da, db) = (2 * l - 1, 2 * l + 1);
        // C as a (da*3) x db matrix
        let c = DMatrix::from_fn(da * 3, db, |row, m3| cg.get(row / 3, row % 3, m3));
        let kron = prev.kronecker(&d1);
        out.push(c.transpose() * kron * c);
    }
    out
}

/// Rotate every block of `x` by the Wigner-D matrix of its degree.
pub fn rotate_irreps(x: &IrrepsTensor, rot: &Rotation) -> IrrepsTensor {
    let layout = x.layout().clone();
    let ds = wigner_d_all(layout.max_degree(), rot);
    let mut out = IrrepsTensor::zeros(layout.clone());
    for (b, &(l, channels)) in layout.blocks().iter().enumerate() {
        let d = &ds[l];
        for c in 0..channels {
            let src = x.component(b, c);
            let dst = out.component_mut(b, c);
            for (i, o) in dst.iter_mut().enumerate() {
                *o = (0..src.len()).map(|j| d[(i, j)] * src[j]).sum();
            }
        }
    }
    out
}
