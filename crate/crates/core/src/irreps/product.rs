use nalgebra::Matrix3;

use super::cg::{clebsch_gordan, CgTensor};
use super::layout::{IrrepsLayout, IrrepsTensor};
use super::sph::cartesian_to_l1;
use super::IrrepsError;

/// One `(l1, l2) -> l3` coupling between blocks of a [`TensorProduct`].
#[derive(Debug, Clone)]
pub struct TpPath {
    pub l1: usize,
    pub l2: usize,
    pub l3: usize,
    pub in1_block: usize,
    pub in2_block: usize,
    pub out_block: usize,
    pub channels: usize,
    /// Offset of this path's per-channel weights in the flat weight vector.
    pub weight_offset: usize,
    cg: &'static CgTensor,
}

/// Channel-wise weighted Clebsch-Gordan tensor product.
///
/// Channel `c` of an input-1 block couples with channel `c` of an input-2
/// block (or its only channel) into channel `c` of every output block of an
/// allowed degree. Each path carries one weight per channel.
#[derive(Debug, Clone)]
pub struct TensorProduct {
    in1: IrrepsLayout,
    in2: IrrepsLayout,
    out: IrrepsLayout,
    paths: Vec<TpPath>,
    num_weights: usize,
}

impl TensorProduct {
    pub fn new(in1: IrrepsLayout, in2: IrrepsLayout, out: IrrepsLayout) -> Result<Self, IrrepsError> {
        if !out.has_unique_degrees() {
            return Err(IrrepsError::DuplicateOutputDegree);
        }
        let mut paths = Vec::new();
        let mut num_weights = 0;
        let mut reached = vec![false; out.blocks().len()];
        for (b1, &(l1, c1)) in in1.blocks().iter().enumerate() {
            for (b2, &(l2, c2)) in in2.blocks().iter().enumerate() {
                if c2 != 1 && c2 != c1 {
                    continue;
                }
                for (bo, &(l3, co)) in out.blocks().iter().enumerate() {
                    if co != c1 || l3 < l1.abs_diff(l2) || l3 > l1 + l2 {
                        continue;
                    }
                    paths.push(TpPath {
                        l1,
                        l2,
                        l3,
                        in1_block: b1,
                        in2_block: b2,
                        out_block: bo,
                        channels: c1,
                        weight_offset: num_weights,
                        cg: clebsch_gordan(l1, l2, l3)?,
                    });
                    num_weights += c1;
                    reached[bo] = true;
                }
            }
        }
        if let Some(bo) = reached.iter().position(|r| !r) {
            return Err(IrrepsError::UnreachableOutput(out.blocks()[bo].0));
        }
        Ok(Self {
            in1,
            in2,
            out,
            paths,
            num_weights,
        })
    }

    pub fn paths(&self) -> &[TpPath] {
        &self.paths
    }

    pub fn num_weights(&self) -> usize {
        self.num_weights
    }

    pub fn out_layout(&self) -> &IrrepsLayout {
        &self.out
    }

    fn check_inputs(&self, p: &IrrepsTensor, g: &IrrepsTensor, weights: &[f64]) -> Result<(), IrrepsError> {
        if p.layout() != &self.in1 || g.layout() != &self.in2 {
            return Err(IrrepsError::LayoutMismatch);
        }
        if weights.len() != self.num_weights {
            return Err(IrrepsError::LengthMismatch {
                expected: self.num_weights,
                got: weights.len(),
            });
        }
        Ok(())
    }

    /// `K[m1][m3] = sum_m2 C[m1][m2][m3] g[m2]`, row-major.
    fn kernel(path: &TpPath, g: &[f64]) -> Vec<f64> {
        let (d1, d2, d3) = (2 * path.l1 + 1, 2 * path.l2 + 1, 2 * path.l3 + 1);
        let mut k = vec![0.0; d1 * d3];
        let c = path.cg.coeffs();
        for m1 in 0..d1 {
            for (m2, gv) in g.iter().enumerate().take(d2) {
                if *gv == 0.0 {
                    continue;
                }
                let base = (m1 * d2 + m2) * d3;
                for m3 in 0..d3 {
                    k[m1 * d3 + m3] += c[base + m3] * gv;
                }
            }
        }
        k
    }

    fn g_component<'a>(&self, g: &'a IrrepsTensor, path: &TpPath, c: usize) -> &'a [f64] {
        let c2 = self.in2.blocks()[path.in2_block].1;
        g.component(path.in2_block, if c2 == 1 { 0 } else { c })
    }

    pub fn forward(&self, p: &IrrepsTensor, g: &IrrepsTensor, weights: &[f64]) -> Result<IrrepsTensor, IrrepsError> {
        self.check_inputs(p, g, weights)?;
        let mut out = IrrepsTensor::zeros(self.out.clone());
        for path in &self.paths {
            let (d1, d3) = (2 * path.l1 + 1, 2 * path.l3 + 1);
            let shared = self.in2.blocks()[path.in2_block].1 == 1;
            let mut kernel = shared.then(|| Self::kernel(path, g.component(path.in2_block, 0)));
            for c in 0..path.channels {
                let w = weights[path.weight_offset + c];
                if w == 0.0 {
                    continue;
                }
                if !shared {
                    kernel = Some(Self::kernel(path, self.g_component(g, path, c)));
                }
                let k = kernel.as_ref().expect("kernel built");
                let a = p.component(path.in1_block, c);
                let dst = out.component_mut(path.out_block, c);
                for m1 in 0..d1 {
                    let wa = w * a[m1];
                    if wa == 0.0 {
                        continue;
                    }
                    for m3 in 0..d3 {
                        dst[m3] += k[m1 * d3 + m3] * wa;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradients of `<grad_out, forward(p, g, w)>` with respect to `p` and
    /// the weights (`g` is treated as constant).
    pub fn backward(
        &self,
        p: &IrrepsTensor,
        g: &IrrepsTensor,
        weights: &[f64],
        grad_out: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), IrrepsError> {
        self.check_inputs(p, g, weights)?;
        let mut grad_p = IrrepsTensor::zeros(self.in1.clone());
        let mut grad_w = vec![0.0; self.num_weights];
        let grad_out = IrrepsTensor::new(self.out.clone(), grad_out.to_vec())?;
        for path in &self.paths {
            let (d1, d3) = (2 * path.l1 + 1, 2 * path.l3 + 1);
            let shared = self.in2.blocks()[path.in2_block].1 == 1;
            let mut kernel = shared.then(|| Self::kernel(path, g.component(path.in2_block, 0)));
            for c in 0..path.channels {
                if !shared {
                    kernel = Some(Self::kernel(path, self.g_component(g, path, c)));
                }
                let k = kernel.as_ref().expect("kernel built");
                let a = p.component(path.in1_block, c);
                let go = grad_out.component(path.out_block, c);
                let w = weights[path.weight_offset + c];
                let mut gw = 0.0;
                let ga = grad_p.component_mut(path.in1_block, c);
                for m1 in 0..d1 {
                    let row = &k[m1 * d3..(m1 + 1) * d3];
                    let kg: f64 = row.iter().zip(go).map(|(kv, gv)| kv * gv).sum();
                    gw += a[m1] * kg;
                    ga[m1] += w * kg;
                }
                grad_w[path.weight_offset + c] += gw;
            }
        }
        Ok((grad_p.into_data(), grad_w))
    }
}

/// Assemble a Cartesian 3x3 matrix from its `1x0e + 1x1e + 1x2e` components:
/// `M_sph[m1][m2] = sum_{l,m} C^{l,m}_{1 m1, 1 m2} f_{l,m}`, then rotated
/// from the `(y, z, x)` basis back to Cartesian axes.
pub fn tensor_expand_3x3(f: &IrrepsTensor) -> Result<Matrix3<f64>, IrrepsError> {
    if f.layout() != &IrrepsLayout::cartesian_3x3() {
        return Err(IrrepsError::LayoutMismatch);
    }
    Ok(expand_3x3_raw(f.data()))
}

/// [`tensor_expand_3x3`] on the raw 9-component vector `[f0 | f1 (3) | f2 (5)]`.
pub fn expand_3x3_raw(f: &[f64]) -> Matrix3<f64> {
    let mut sph = Matrix3::zeros();
    let mut offset = 0;
    for l in 0..=2 {
        let cg = clebsch_gordan(1, 1, l).expect("static degree");
        for m in 0..(2 * l + 1) {
            let v = f[offset + m];
            if v == 0.0 {
                continue;
            }
            for m1 in 0..3 {
                for m2 in 0..3 {
                    sph[(m1, m2)] += cg.get(m1, m2, m) * v;
                }
            }
        }
        offset += 2 * l + 1;
    }
    let p = cartesian_to_l1();
    p.transpose() * sph * p
}

/// Adjoint of [`expand_3x3_raw`]: maps `dL/dM` (Cartesian) to `dL/df`.
///
/// Because the expansion is orthogonal this is also its inverse, i.e. the
/// irreducible decomposition of a 3x3 matrix.
pub fn expand_3x3_adjoint(grad: &Matrix3<f64>) -> [f64; 9] {
    let p = cartesian_to_l1();
    let sph = p * grad * p.transpose();
    let mut out = [0.0; 9];
    let mut offset = 0;
    for l in 0..=2 {
        let cg = clebsch_gordan(1, 1, l).expect("static degree");
        for m in 0..(2 * l + 1) {
            let mut s = 0.0;
            for m1 in 0..3 {
                for m2 in 0..3 {
                    s += cg.get(m1, m2, m) * sph[(m1, m2)];
                }
            }
            out[offset + m] = s;
        }
        offset += 2 * l + 1;
    }
    out
}
