//! Equivariant message-passing network with a direct Hessian head.

mod backbone;
mod params;
mod readout;

use nalgebra::{DMatrix, Matrix3};

pub use backbone::{envelope, gaussian_basis};
pub use params::{ModelConfig, ModelParams, ParamLayout, Segment, MAX_SPECIES};
pub use readout::{assemble_hessian, diagonal_block, flat_matrix, pair_block, project_irreps, HessianMatrix, PairFeature};

use crate::irreps::{expand_3x3_adjoint, expand_3x3_raw, l1_to_cart, IrrepsTensor, TensorProduct};
use crate::molecule::{build_graph, Graph, Molecule};
use crate::Error;
use backbone::{
    check_distance, edge_geometry, layer_backward, layer_forward, message_backward, message_forward, radial_forward,
    EdgeGeom, LayerCache, MessageCache,
};
use params::LayerIdx;

/// Node features, energy (eV) and directly predicted forces (eV/A).
#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub node_features: Vec<IrrepsTensor>,
    pub energy: f64,
    pub forces: Vec<[f64; 3]>,
}

/// Configuration, weights and the output scale of the Hessian head.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
    /// Multiplies the raw head output; set from the training targets.
    pub hessian_scale: f64,
    tp: TensorProduct,
}

/// Everything the backward pass of the Hessian head needs.
pub struct HessianPass {
    edges: Vec<EdgeGeom>,
    z: Vec<u32>,
    layer_caches: Vec<LayerCache>,
    refined: Vec<IrrepsTensor>,
    pairs: Vec<MessageCache>,
    /// `H' + H'^T` before scaling.
    pub raw: DMatrix<f64>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Self::from_params(config, params, 1.0)
    }

    pub fn from_params(config: ModelConfig, params: ModelParams, hessian_scale: f64) -> Result<Self, Error> {
        config.validate()?;
        if params.values().len() != ParamLayout::new(&config).total() {
            return Err(Error::ShapeMismatch {
                expected: ParamLayout::new(&config).total(),
                got: params.values().len(),
            });
        }
        if !(hessian_scale > 0.0 && hessian_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("hessian scale must be positive, got {hessian_scale}")));
        }
        let tp = config.message_product();
        Ok(Self {
            config,
            params,
            hessian_scale,
            tp,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.values().len()
    }

    fn p(&self) -> &[f64] {
        self.params.values()
    }

    fn layout(&self) -> &ParamLayout {
        self.params.layout()
    }

    fn layer_idx(&self, layer: usize) -> Result<&LayerIdx, Error> {
        let l = self.layout();
        l.layers
            .iter()
            .chain(&l.head)
            .nth(layer)
            .ok_or_else(|| Error::InvalidConfig(format!("no layer {layer}")))
    }

    /// Tensor-product path weights of backbone layer `layer` (head layers
    /// follow the backbone layers) at distance `d`.
    pub fn radial_weights(&self, layer: usize, d: f64) -> Result<Vec<f64>, Error> {
        check_distance(d, self.config.cutoff)?;
        let idx = self.layer_idx(layer)?;
        Ok(radial_forward(self.p(), &idx.radial, d, &self.config).weights)
    }

    /// Directed message from `h_j` to `h_i` along `r_ij = r_j - r_i` in layer `layer`.
    pub fn message(&self, layer: usize, h_i: &IrrepsTensor, h_j: &IrrepsTensor, r_ij: [f64; 3]) -> Result<IrrepsTensor, Error> {
        let idx = self.layer_idx(layer)?;
        let node = self.config.node_layout();
        if h_i.layout() != &node || h_j.layout() != &node {
            return Err(crate::irreps::IrrepsError::LayoutMismatch.into());
        }
        let d = (r_ij[0] * r_ij[0] + r_ij[1] * r_ij[1] + r_ij[2] * r_ij[2]).sqrt();
        check_distance(d, self.config.cutoff)?;
        let e = single_edge(&self.config, r_ij, d);
        let h = [h_i.clone(), h_j.clone()];
        Ok(message_forward(self.p(), &idx.radial, &self.tp, &self.config, &h, &e).out)
    }

    fn embed(&self, z: &[u32]) -> Result<Vec<IrrepsTensor>, Error> {
        let node = self.config.node_layout();
        let e = self.config.embedding_dim;
        let c = self.config.channels;
        let l = self.layout();
        let table = &self.p()[l.embedding.clone()];
        let proj = &self.p()[l.embed_proj.clone()];
        z.iter()
            .map(|&zi| {
                if zi == 0 || zi as usize > MAX_SPECIES {
                    return Err(Error::UnknownElement(format!("atomic number {zi} outside the embedding table")));
                }
                let row = &table[(zi as usize - 1) * e..zi as usize * e];
                let mut h = IrrepsTensor::zeros(node.clone());
                for ch in 0..c {
                    h.component_mut(0, ch)[0] = proj[ch * e..(ch + 1) * e].iter().zip(row).map(|(a, b)| a * b).sum();
                }
                Ok(h)
            })
            .collect()
    }

    fn run_layers(&self, idx: &[LayerIdx], h: Vec<IrrepsTensor>, edges: &[EdgeGeom], caches: &mut Vec<LayerCache>) -> Vec<IrrepsTensor> {
        idx.iter().fold(h, |h, li| {
            let (out, cache) = layer_forward(self.p(), li, &self.tp, &self.config, &h, edges);
            caches.push(cache);
            out
        })
    }

    pub fn graph(&self, mol: &Molecule) -> Result<Graph, Error> {
        build_graph(mol, self.config.cutoff)
    }

    /// Backbone pass: node features, energy and direct forces.
    pub fn forward(&self, mol: &Molecule) -> Result<BackboneOutput, Error> {
        let graph = self.graph(mol)?;
        let edges = edge_geometry(&graph, &self.config);
        let h0 = self.embed(mol.atomic_numbers())?;
        let h = self.run_layers(&self.layout().layers, h0, &edges, &mut Vec::new());
        let l = self.layout();
        let we = &self.p()[l.energy.clone()];
        let wf = &self.p()[l.force.clone()];
        let mut energy = 0.0;
        let mut forces = Vec::with_capacity(h.len());
        for hi in &h {
            energy += we.iter().enumerate().map(|(c, w)| w * hi.component(0, c)[0]).sum::<f64>();
            let mut v = [0.0; 3];
            for (c, w) in wf.iter().enumerate() {
                for (vm, x) in v.iter_mut().zip(hi.component(1, c)) {
                    *vm += w * x;
                }
            }
            forces.push(l1_to_cart(&v));
        }
        Ok(BackboneOutput {
            node_features: h,
            energy,
            forces,
        })
    }

    /// The head-owned interaction layers applied to backbone features.
    pub fn head_refine(&self, node_features: Vec<IrrepsTensor>, graph: &Graph) -> Vec<IrrepsTensor> {
        let edges = edge_geometry(graph, &self.config);
        self.run_layers(&self.layout().head, node_features, &edges, &mut Vec::new())
    }

    /// One un-aggregated message per directed edge.
    pub fn pair_features(&self, node_features: &[IrrepsTensor], graph: &Graph) -> Vec<PairFeature> {
        let radial = &self.layout().pair_radial;
        edge_geometry(graph, &self.config)
            .iter()
            .map(|e| PairFeature {
                i: e.i,
                j: e.j,
                feature: message_forward(self.p(), radial, &self.tp, &self.config, node_features, e).out,
            })
            .collect()
    }

    pub fn pair_projection_weights(&self) -> &[f64] {
        &self.p()[self.layout().pair_proj.clone()]
    }

    pub fn diagonal_projection_weights(&self) -> &[f64] {
        &self.p()[self.layout().diag_proj.clone()]
    }

    /// Predicted Hessian in eV/A^2 from a single forward pass.
    pub fn predict_hessian(&self, mol: &Molecule) -> Result<HessianMatrix, Error> {
        let pass = self.hessian_forward(mol)?;
        Ok(HessianMatrix::from_symmetric(pass.raw * self.hessian_scale))
    }

    /// Forward pass of the Hessian head keeping every intermediate.
    pub fn hessian_forward(&self, mol: &Molecule) -> Result<HessianPass, Error> {
        let graph = self.graph(mol)?;
        let edges = edge_geometry(&graph, &self.config);
        let l = self.layout();
        let h0 = self.embed(mol.atomic_numbers())?;
        let mut layer_caches = Vec::new();
        let h = self.run_layers(&l.layers, h0, &edges, &mut layer_caches);
        let refined = self.run_layers(&l.head, h, &edges, &mut layer_caches);
        let n = mol.len();
        let mut hp = DMatrix::zeros(3 * n, 3 * n);
        let pair_w = self.pair_projection_weights();
        let diag_w = self.diagonal_projection_weights();
        let mut pairs = Vec::with_capacity(edges.len());
        for e in &edges {
            let m = message_forward(self.p(), &l.pair_radial, &self.tp, &self.config, &refined, e);
            let f = project_irreps(&m.out, pair_w)?;
            hp.fixed_view_mut::<3, 3>(3 * e.i, 3 * e.j).copy_from(&expand_3x3_raw(f.data()));
            pairs.push(m);
        }
        for (i, hi) in refined.iter().enumerate() {
            let f = project_irreps(hi, diag_w)?;
            hp.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(&expand_3x3_raw(f.data()));
        }
        let raw = &hp + hp.transpose();
        Ok(HessianPass {
            edges,
            z: mol.atomic_numbers().to_vec(),
            layer_caches,
            refined,
            pairs,
            raw,
        })
    }

    /// Gradient of a scalar loss with respect to all parameters, given
    /// `dL/d raw` for the unscaled output of [`Model::hessian_forward`].
    pub fn hessian_backward(&self, pass: &HessianPass, grad_raw: &DMatrix<f64>) -> Vec<f64> {
        let p = self.p();
        let l = self.layout();
        let node = self.config.node_layout();
        let mut grad = vec![0.0; p.len()];
        // raw = H' + H'^T
        let g = grad_raw + grad_raw.transpose();
        let block = |i: usize, j: usize| -> Matrix3<f64> { g.fixed_view::<3, 3>(3 * i, 3 * j).into_owned() };
        let mut grad_h: Vec<Vec<f64>> = vec![vec![0.0; node.dim()]; pass.refined.len()];

        let pair_w = &p[l.pair_proj.clone()];
        for (e, m) in pass.edges.iter().zip(&pass.pairs) {
            let g_out = expand_3x3_adjoint(&block(e.i, e.j));
            let mut g_feat = vec![0.0; m.out.data().len()];
            readout::project_backward(&m.out, pair_w, &g_out, &mut grad[l.pair_proj.clone()], &mut g_feat);
            message_backward(p, &l.pair_radial, &self.tp, &node, e, m, &g_feat, &mut grad, &mut grad_h);
        }
        let diag_w = &p[l.diag_proj.clone()];
        for (i, hi) in pass.refined.iter().enumerate() {
            let g_out = expand_3x3_adjoint(&block(i, i));
            readout::project_backward(hi, diag_w, &g_out, &mut grad[l.diag_proj.clone()], &mut grad_h[i]);
        }

        let all: Vec<&LayerIdx> = l.layers.iter().chain(&l.head).collect();
        for (li, cache) in all.iter().zip(&pass.layer_caches).rev() {
            grad_h = layer_backward(p, li, &self.tp, &self.config, &pass.edges, cache, &grad_h, &mut grad);
        }

        let e = self.config.embedding_dim;
        let table = &p[l.embedding.clone()];
        let proj = &p[l.embed_proj.clone()];
        for (zi, gh) in pass.z.iter().zip(&grad_h) {
            let row = (*zi as usize - 1) * e;
            for ch in 0..self.config.channels {
                let g0 = gh[node.offset(0) + ch];
                if g0 == 0.0 {
                    continue;
                }
                for k in 0..e {
                    grad[l.embed_proj.start + ch * e + k] += g0 * table[row + k];
                    grad[l.embedding.start + row + k] += g0 * proj[ch * e + k];
                }
            }
        }
        grad
    }
}

fn single_edge(cfg: &ModelConfig, r: [f64; 3], d: f64) -> EdgeGeom {
    let u = r.map(|x| x / d);
    let y = crate::irreps::real_sph_harm_all(cfg.l_max, u).expect("normalized direction");
    EdgeGeom {
        i: 0,
        j: 1,
        distance: d,
        sh: IrrepsTensor::new(cfg.sh_layout(), y).expect("sh layout"),
    }
}
