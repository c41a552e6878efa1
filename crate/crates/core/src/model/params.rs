use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::irreps::{IrrepsLayout, TensorProduct};
use crate::Error;

/// Number of species rows in the embedding table (atomic numbers 1..=20).
pub const MAX_SPECIES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Highest feature degree; must be at least 2 to express 3x3 blocks.
    pub l_max: usize,
    /// Channels per degree in node features.
    pub channels: usize,
    /// Backbone message-passing layers.
    pub layers: usize,
    /// Graph cutoff in Angstrom, shared by backbone and Hessian head.
    pub cutoff: f64,
    /// Gaussian radial basis functions.
    pub num_radial: usize,
    /// Extra message-passing layers owned by the Hessian head.
    pub head_layers: usize,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            l_max: 2,
            channels: 8,
            layers: 2,
            cutoff: 6.0,
            num_radial: 16,
            head_layers: 1,
            embedding_dim: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.l_max < 2 {
            return bad(format!("l_max must be >= 2, got {}", self.l_max));
        }
        if self.l_max > crate::irreps::SUPPORTED_L_MAX {
            return bad(format!("l_max {} exceeds supported maximum", self.l_max));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return bad(format!("cutoff must be positive, got {}", self.cutoff));
        }
        if self.channels == 0 || self.num_radial < 2 || self.embedding_dim == 0 {
            return bad("channels, embedding_dim must be > 0 and num_radial >= 2".into());
        }
        Ok(())
    }

    pub fn node_layout(&self) -> IrrepsLayout {
        IrrepsLayout::uniform(self.l_max, self.channels).expect("channels > 0")
    }

    pub fn pair_layout(&self) -> IrrepsLayout {
        IrrepsLayout::uniform(self.l_max, 2 * self.channels).expect("channels > 0")
    }

    pub fn sh_layout(&self) -> IrrepsLayout {
        IrrepsLayout::uniform(self.l_max, 1).expect("static")
    }

    /// Tensor product used by every message: `(h_i | h_j) x Y(r_ij)`.
    pub fn message_product(&self) -> TensorProduct {
        TensorProduct::new(self.pair_layout(), self.sh_layout(), self.pair_layout())
            .expect("uniform layouts reach every degree")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct RadialIdx {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIdx {
    pub radial: RadialIdx,
    pub mix: Range<usize>,
}

/// Offsets of every named parameter block inside the flat vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
    pub(crate) embedding: Range<usize>,
    pub(crate) embed_proj: Range<usize>,
    pub(crate) layers: Vec<LayerIdx>,
    pub(crate) head: Vec<LayerIdx>,
    pub(crate) pair_radial: RadialIdx,
    pub(crate) pair_proj: Range<usize>,
    pub(crate) diag_proj: Range<usize>,
    pub(crate) energy: Range<usize>,
    pub(crate) force: Range<usize>,
}

struct Builder {
    segments: Vec<Segment>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, len: usize) -> Range<usize> {
        let r = self.total..self.total + len;
        self.segments.push(Segment {
            name,
            offset: self.total,
            len,
        });
        self.total += len;
        r
    }

    fn radial(&mut self, prefix: &str, basis: usize, out: usize) -> RadialIdx {
        RadialIdx {
            w1: self.push(format!("{prefix}.radial.w1"), basis * basis),
            b1: self.push(format!("{prefix}.radial.b1"), basis),
            w2: self.push(format!("{prefix}.radial.w2"), out * basis),
            b2: self.push(format!("{prefix}.radial.b2"), out),
        }
    }

    fn layer(&mut self, prefix: &str, cfg: &ModelConfig, n_weights: usize) -> LayerIdx {
        LayerIdx {
            radial: self.radial(prefix, cfg.num_radial, n_weights),
            mix: self.push(format!("{prefix}.mix"), (cfg.l_max + 1) * cfg.channels * 2 * cfg.channels),
        }
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let n_weights = cfg.message_product().num_weights();
        let c = cfg.channels;
        let mut b = Builder {
            segments: Vec::new(),
            total: 0,
        };
        let embedding = b.push("embedding".into(), MAX_SPECIES * cfg.embedding_dim);
        let embed_proj = b.push("embed_proj".into(), c * cfg.embedding_dim);
        let layers = (0..cfg.layers)
            .map(|t| b.layer(&format!("layer{t}"), cfg, n_weights))
            .collect();
        let head = (0..cfg.head_layers)
            .map(|t| b.layer(&format!("head{t}"), cfg, n_weights))
            .collect();
        let pair_radial = b.radial("pair", cfg.num_radial, n_weights);
        let pair_proj = b.push("pair.proj".into(), 3 * 2 * c);
        let diag_proj = b.push("diag.proj".into(), 3 * c);
        let energy = b.push("energy.readout".into(), c);
        let force = b.push("force.readout".into(), c);
        Self {
            segments: b.segments,
            total: b.total,
            embedding,
            embed_proj,
            layers,
            head,
            pair_radial,
            pair_proj,
            diag_proj,
            energy,
            force,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// All learnable weights as one flat vector plus the layout describing it.
#[derive(Debug, Clone)]
pub struct ModelParams {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.layout.segments == other.layout.segments
    }
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layout = ParamLayout::new(cfg);
        let values = vec![0.0; layout.total()];
        Self { layout, values }
    }

    /// Deterministic initialization: zero-mean normals scaled by fan-in,
    /// radial first layers set to the identity.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |values: &mut [f64], range: &Range<usize>, fan_in: usize| {
            let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            for v in &mut values[range.clone()] {
                *v = dist.sample(&mut rng);
            }
        };
        let l = p.layout.clone();
        let c = cfg.channels;
        let nb = cfg.num_radial;
        fill(&mut p.values, &l.embedding, 1);
        fill(&mut p.values, &l.embed_proj, cfg.embedding_dim);
        let radial_init = |values: &mut [f64], idx: &RadialIdx, fill: &mut dyn FnMut(&mut [f64], &Range<usize>, usize)| {
            for k in 0..nb {
                values[idx.w1.start + k * nb + k] = 1.0;
            }
            fill(values, &idx.w2, nb);
        };
        for layer in l.layers.iter().chain(&l.head) {
            radial_init(&mut p.values, &layer.radial, &mut fill);
            fill(&mut p.values, &layer.mix, 2 * c);
        }
        radial_init(&mut p.values, &l.pair_radial, &mut fill);
        fill(&mut p.values, &l.pair_proj, 2 * c);
        fill(&mut p.values, &l.diag_proj, c);
        fill(&mut p.values, &l.energy, c);
        fill(&mut p.values, &l.force, c);
        p
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn unflatten(cfg: &ModelConfig, values: Vec<f64>) -> Result<Self, Error> {
        let layout = ParamLayout::new(cfg);
        if values.len() != layout.total() {
            return Err(Error::ShapeMismatch {
                expected: layout.total(),
                got: values.len(),
            });
        }
        Ok(Self { layout, values })
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.layout.segment(name)?.clone();
        Some(&mut self.values[s.offset..s.offset + s.len])
    }
}
