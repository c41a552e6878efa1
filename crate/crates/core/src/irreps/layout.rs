use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::IrrepsError;

/// Ordered list of `(degree, channels)` blocks.
///
/// Within a block the data is channel-major: component `m` of channel `c`
/// of a degree-`l` block lives at `offset + c * (2l + 1) + (m + l)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IrrepsLayout {
    blocks: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    dim: usize,
}

impl IrrepsLayout {
    pub fn new(blocks: Vec<(usize, usize)>) -> Result<Self, IrrepsError> {
        if let Some(&(l, _)) = blocks.iter().find(|(_, c)| *c == 0) {
            return Err(IrrepsError::EmptyBlock(l));
        }
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut dim = 0;
        for &(l, c) in &blocks {
            offsets.push(dim);
            dim += c * (2 * l + 1);
        }
        Ok(Self {
            blocks,
            offsets,
            dim,
        })
    }

    /// `channels x l` for every `l` in `0..=l_max`.
    pub fn uniform(l_max: usize, channels: usize) -> Result<Self, IrrepsError> {
        Self::new((0..=l_max).map(|l| (l, channels)).collect())
    }

    /// `1x0e + 1x1e + 1x2e`, the layout a 3x3 Cartesian tensor decomposes into.
    pub fn cartesian_3x3() -> Self {
        Self::new(vec![(0, 1), (1, 1), (2, 1)]).expect("static layout")
    }

    pub fn blocks(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    /// Index of the first block with degree `l`.
    pub fn find_degree(&self, l: usize) -> Option<usize> {
        self.blocks.iter().position(|&(d, _)| d == l)
    }

    pub fn max_degree(&self) -> usize {
        self.blocks.iter().map(|&(l, _)| l).max().unwrap_or(0)
    }

    pub fn has_unique_degrees(&self) -> bool {
        let mut seen = Vec::new();
        for &(l, _) in &self.blocks {
            if seen.contains(&l) {
                return false;
            }
            seen.push(l);
        }
        true
    }
}

/// Flat irreps feature vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct IrrepsTensor {
    layout: IrrepsLayout,
    data: Vec<f64>,
}

impl IrrepsTensor {
    pub fn new(layout: IrrepsLayout, data: Vec<f64>) -> Result<Self, IrrepsError> {
        if data.len() != layout.dim() {
            return Err(IrrepsError::LengthMismatch {
                expected: layout.dim(),
                got: data.len(),
            });
        }
        Ok(Self { layout, data })
    }

    pub fn zeros(layout: IrrepsLayout) -> Self {
        let data = vec![0.0; layout.dim()];
        Self { layout, data }
    }

    pub fn layout(&self) -> &IrrepsLayout {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Components of channel `channel` of block `block`.
    pub fn component(&self, block: usize, channel: usize) -> &[f64] {
        let (l, _) = self.layout.blocks[block];
        let w = 2 * l + 1;
        let start = self.layout.offset(block) + channel * w;
        &self.data[start..start + w]
    }

    pub fn component_mut(&mut self, block: usize, channel: usize) -> &mut [f64] {
        let (l, _) = self.layout.blocks[block];
        let w = 2 * l + 1;
        let start = self.layout.offset(block) + channel * w;
        &mut self.data[start..start + w]
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }
}

/// Proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    const TOL: f64 = 1e-12;

    pub fn new(matrix: Matrix3<f64>) -> Result<Self, IrrepsError> {
        let err = (matrix.transpose() * matrix - Matrix3::identity()).amax();
        let det = matrix.determinant();
        if err > Self::TOL || (det - 1.0).abs() > Self::TOL {
            return Err(IrrepsError::NotARotation {
                orthogonality: err,
                det,
            });
        }
        Ok(Self(matrix))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Uniformly distributed rotation (normalized Gaussian quaternion).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|v| v / n);
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        );
        Self(m)
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let a = nalgebra::Unit::new_normalize(nalgebra::Vector3::from(axis));
        Self(*nalgebra::Rotation3::from_axis_angle(&a, angle).matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.0 * nalgebra::Vector3::from(v);
        [r.x, r.y, r.z]
    }
}
