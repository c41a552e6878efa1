//! Message-passing backbone: radial network, messages, interaction layers.

use std::f64::consts::PI;

use crate::irreps::{real_sph_harm_all, IrrepsLayout, IrrepsTensor, TensorProduct};
use crate::molecule::{Edge, Graph};
use crate::Error;

use super::params::{LayerIdx, ModelConfig, RadialIdx};

/// Smooth cutoff `(cos(pi d / rc) + 1) / 2`, zero with zero slope at `rc`.
pub fn envelope(d: f64, cutoff: f64) -> f64 {
    if d >= cutoff {
        0.0
    } else {
        0.5 * ((PI * d / cutoff).cos() + 1.0)
    }
}

/// Gaussian radial basis with centers evenly spaced on `[0, cutoff]`.
pub fn gaussian_basis(d: f64, cutoff: f64, n: usize) -> Vec<f64> {
    let width = cutoff / (n - 1) as f64;
    (0..n)
        .map(|k| {
            let x = (d - k as f64 * width) / width;
            (-0.5 * x * x).exp()
        })
        .collect()
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Intermediate values of one radial-network evaluation.
#[derive(Debug, Clone)]
pub(crate) struct RadialCache {
    basis: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    env: f64,
    pub weights: Vec<f64>,
}

pub(crate) fn radial_forward(p: &[f64], idx: &RadialIdx, d: f64, cfg: &ModelConfig) -> RadialCache {
    let nb = cfg.num_radial;
    let basis = gaussian_basis(d, cfg.cutoff, nb);
    let w1 = &p[idx.w1.clone()];
    let b1 = &p[idx.b1.clone()];
    let pre: Vec<f64> = (0..nb)
        .map(|r| b1[r] + (0..nb).map(|k| w1[r * nb + k] * basis[k]).sum::<f64>())
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|&z| silu(z)).collect();
    let w2 = &p[idx.w2.clone()];
    let b2 = &p[idx.b2.clone()];
    let env = envelope(d, cfg.cutoff);
    let weights = (0..b2.len())
        .map(|o| {
            let row = &w2[o * nb..(o + 1) * nb];
            env * (b2[o] + row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect();
    RadialCache {
        basis,
        pre,
        hidden,
        env,
        weights,
    }
}

/// Accumulate parameter gradients given `dL/d weights`.
pub(crate) fn radial_backward(p: &[f64], idx: &RadialIdx, cache: &RadialCache, grad_w: &[f64], grad: &mut [f64]) {
    let nb = cache.basis.len();
    let w2 = &p[idx.w2.clone()];
    let mut d_hidden = vec![0.0; nb];
    for (o, gw) in grad_w.iter().enumerate() {
        let g = gw * cache.env;
        if g == 0.0 {
            continue;
        }
        grad[idx.b2.start + o] += g;
        let row = idx.w2.start + o * nb;
        for k in 0..nb {
            grad[row + k] += g * cache.hidden[k];
            d_hidden[k] += g * w2[o * nb + k];
        }
    }
    for r in 0..nb {
        let dz = d_hidden[r] * silu_grad(cache.pre[r]);
        grad[idx.b1.start + r] += dz;
        for k in 0..nb {
            grad[idx.w1.start + r * nb + k] += dz * cache.basis[k];
        }
    }
}

/// Per-edge geometry shared by all layers.
#[derive(Debug, Clone)]
pub(crate) struct EdgeGeom {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub sh: IrrepsTensor,
}

pub(crate) fn edge_geometry(graph: &Graph, cfg: &ModelConfig) -> Vec<EdgeGeom> {
    let sh_layout = cfg.sh_layout();
    graph
        .edges
        .iter()
        .map(|e: &Edge| {
            let u = e.vector.map(|x| x / e.distance);
            let y = real_sph_harm_all(cfg.l_max, u).expect("normalized direction");
            EdgeGeom {
                i: e.i,
                j: e.j,
                distance: e.distance,
                sh: IrrepsTensor::new(sh_layout.clone(), y).expect("sh layout"),
            }
        })
        .collect()
}

/// Concatenate two node features degree by degree: channels of `a` first.
pub(crate) fn concat(a: &IrrepsTensor, b: &IrrepsTensor, pair: &IrrepsLayout) -> IrrepsTensor {
    let mut data = Vec::with_capacity(pair.dim());
    let node = a.layout();
    for (blk, &(l, c)) in node.blocks().iter().enumerate() {
        let start = node.offset(blk);
        let len = c * (2 * l + 1);
        data.extend_from_slice(&a.data()[start..start + len]);
        data.extend_from_slice(&b.data()[start..start + len]);
    }
    IrrepsTensor::new(pair.clone(), data).expect("pair layout is two node layouts")
}

/// Split a pair-layout gradient back into its two node halves, adding them
/// to `ga` and `gb`.
pub(crate) fn split_add(g: &[f64], node: &IrrepsLayout, ga: &mut [f64], gb: &mut [f64]) {
    let mut src = 0;
    for (blk, &(l, c)) in node.blocks().iter().enumerate() {
        let start = node.offset(blk);
        let len = c * (2 * l + 1);
        for k in 0..len {
            ga[start + k] += g[src + k];
            gb[start + k] += g[src + len + k];
        }
        src += 2 * len;
    }
}

/// One message `TP(h_i | h_j, Y(r_ij); w(|r_ij|))`.
pub(crate) struct MessageCache {
    pub input: IrrepsTensor,
    pub radial: RadialCache,
    pub out: IrrepsTensor,
}

pub(crate) fn message_forward(
    p: &[f64],
    radial: &RadialIdx,
    tp: &TensorProduct,
    cfg: &ModelConfig,
    h: &[IrrepsTensor],
    e: &EdgeGeom,
) -> MessageCache {
    let input = concat(&h[e.i], &h[e.j], tp.out_layout());
    let radial = radial_forward(p, radial, e.distance, cfg);
    let out = tp.forward(&input, &e.sh, &radial.weights).expect("consistent layouts");
    MessageCache { input, radial, out }
}

/// Backpropagate `dL/d message` into parameter and node-feature gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn message_backward(
    p: &[f64],
    radial: &RadialIdx,
    tp: &TensorProduct,
    node: &IrrepsLayout,
    e: &EdgeGeom,
    cache: &MessageCache,
    grad_out: &[f64],
    grad: &mut [f64],
    grad_h: &mut [Vec<f64>],
) {
    let (g_in, g_w) = tp
        .backward(&cache.input, &e.sh, &cache.radial.weights, grad_out)
        .expect("consistent layouts");
    radial_backward(p, radial, &cache.radial, &g_w, grad);
    if e.i == e.j {
        unreachable!("graphs have no self edges");
    }
    let (a, b) = if e.i < e.j {
        let (lo, hi) = grad_h.split_at_mut(e.j);
        (&mut lo[e.i], &mut hi[0])
    } else {
        let (lo, hi) = grad_h.split_at_mut(e.i);
        (&mut hi[0], &mut lo[e.j])
    };
    split_add(&g_in, node, a, b);
}

/// Forward record of one interaction layer.
pub(crate) struct LayerCache {
    messages: Vec<MessageCache>,
    agg: Vec<IrrepsTensor>,
}

/// `h'_i = h_i + Mix(sum_j m_ij)`, mixing channels within each degree.
pub(crate) fn layer_forward(
    p: &[f64],
    idx: &LayerIdx,
    tp: &TensorProduct,
    cfg: &ModelConfig,
    h: &[IrrepsTensor],
    edges: &[EdgeGeom],
) -> (Vec<IrrepsTensor>, LayerCache) {
    let pair = tp.out_layout();
    let mut agg: Vec<IrrepsTensor> = h.iter().map(|_| IrrepsTensor::zeros(pair.clone())).collect();
    let mut messages = Vec::with_capacity(edges.len());
    for e in edges {
        let m = message_forward(p, &idx.radial, tp, cfg, h, e);
        for (a, v) in agg[e.i].data_mut().iter_mut().zip(m.out.data()) {
            *a += v;
        }
        messages.push(m);
    }
    let mix = &p[idx.mix.clone()];
    let out = h
        .iter()
        .zip(&agg)
        .map(|(hi, ai)| {
            let mut o = hi.clone();
            apply_mix(mix, cfg, ai, &mut o);
            o
        })
        .collect();
    (out, LayerCache { messages, agg })
}

/// `out[l, c, m] += sum_c' W_l[c, c'] x[l, c', m]` with `x` in the pair layout.
fn apply_mix(mix: &[f64], cfg: &ModelConfig, x: &IrrepsTensor, out: &mut IrrepsTensor) {
    let c_out = cfg.channels;
    let c_in = 2 * c_out;
    for l in 0..=cfg.l_max {
        let w = &mix[l * c_out * c_in..(l + 1) * c_out * c_in];
        for co in 0..c_out {
            let dst = out.component_mut(l, co);
            for ci in 0..c_in {
                let wv = w[co * c_in + ci];
                for (d, s) in dst.iter_mut().zip(x.component(l, ci)) {
                    *d += wv * s;
                }
            }
        }
    }
}

/// Given `dL/dh'` (per atom), accumulate parameter gradients and return
/// `dL/dh` for the layer input.
pub(crate) fn layer_backward(
    p: &[f64],
    idx: &LayerIdx,
    tp: &TensorProduct,
    cfg: &ModelConfig,
    edges: &[EdgeGeom],
    cache: &LayerCache,
    grad_out: &[Vec<f64>],
    grad: &mut [f64],
) -> Vec<Vec<f64>> {
    let node = cfg.node_layout();
    let pair = tp.out_layout();
    let c_out = cfg.channels;
    let c_in = 2 * c_out;
    let mix = &p[idx.mix.clone()];
    let mut grad_h = grad_out.to_vec();
    let mut grad_agg: Vec<Vec<f64>> = Vec::with_capacity(grad_out.len());
    for (go, agg) in grad_out.iter().zip(&cache.agg) {
        let go = IrrepsTensor::new(node.clone(), go.clone()).expect("node layout");
        let mut ga = IrrepsTensor::zeros(pair.clone());
        for l in 0..=cfg.l_max {
            let base = idx.mix.start + l * c_out * c_in;
            for co in 0..c_out {
                let g = go.component(l, co);
                for ci in 0..c_in {
                    let x = agg.component(l, ci);
                    grad[base + co * c_in + ci] += g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    let wv = mix[l * c_out * c_in + co * c_in + ci];
                    for (d, s) in ga.component_mut(l, ci).iter_mut().zip(g) {
                        *d += wv * s;
                    }
                }
            }
        }
        grad_agg.push(ga.into_data());
    }
    for (e, m) in edges.iter().zip(&cache.messages) {
        message_backward(p, &idx.radial, tp, &node, e, m, &grad_agg[e.i], grad, &mut grad_h);
    }
    grad_h
}

pub(crate) fn check_distance(d: f64, cutoff: f64) -> Result<(), Error> {
    if d > cutoff {
        return Err(Error::BeyondCutoff { distance: d, cutoff });
    }
    if !(d > 0.0) {
        return Err(Error::InvalidMolecule(format!("non-positive distance {d}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_vanishes_with_zero_slope() {
        let rc = 6.0;
        assert_eq!(envelope(rc, rc), 0.0);
        let h = 1e-7;
        let slope = (envelope(rc, rc) - envelope(rc - h, rc)) / h;
        assert!(slope.abs() < 1e-8, "{slope}");
        assert!((envelope(0.0, rc) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn silu_gradient_matches_fd() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn concat_split_are_adjoint() {
        let node = IrrepsLayout::uniform(2, 3).unwrap();
        let pair = IrrepsLayout::uniform(2, 6).unwrap();
        let a = IrrepsTensor::new(node.clone(), (0..node.dim()).map(|x| x as f64).collect()).unwrap();
        let b = IrrepsTensor::new(node.clone(), (0..node.dim()).map(|x| -(x as f64)).collect()).unwrap();
        let ab = concat(&a, &b, &pair);
        assert_eq!(ab.component(1, 0), a.component(1, 0));
        assert_eq!(ab.component(1, 3), b.component(1, 0));
        let mut ga = vec![0.0; node.dim()];
        let mut gb = vec![0.0; node.dim()];
        split_add(ab.data(), &node, &mut ga, &mut gb);
        assert_eq!(ga, a.data());
        assert_eq!(gb, b.data());
    }
}
