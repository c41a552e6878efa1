//! Molecules, the element table and cutoff graphs.

use serde::{Deserialize, Serialize};

use crate::Error;

/// Minimum interatomic distance (Angstrom) below which atoms count as coincident.
pub const COINCIDENT_TOL: f64 = 1e-6;

/// (symbol, standard atomic weight in amu) for Z = 1..=36.
const ELEMENTS: [(&str, f64); 36] = [
    ("H", 1.008),
    ("He", 4.002_602),
    ("Li", 6.94),
    ("Be", 9.012_183),
    ("B", 10.81),
    ("C", 12.011),
    ("N", 14.007),
    ("O", 15.999),
    ("F", 18.998_403),
    ("Ne", 20.1797),
    ("Na", 22.989_769),
    ("Mg", 24.305),
    ("Al", 26.981_538),
    ("Si", 28.085),
    ("P", 30.973_762),
    ("S", 32.06),
    ("Cl", 35.45),
    ("Ar", 39.95),
    ("K", 39.0983),
    ("Ca", 40.078),
    ("Sc", 44.955_908),
    ("Ti", 47.867),
    ("V", 50.9415),
    ("Cr", 51.9961),
    ("Mn", 54.938_043),
    ("Fe", 55.845),
    ("Co", 58.933_194),
    ("Ni", 58.6934),
    ("Cu", 63.546),
    ("Zn", 65.38),
    ("Ga", 69.723),
    ("Ge", 72.630),
    ("As", 74.921_595),
    ("Se", 78.971),
    ("Br", 79.904),
    ("Kr", 83.798),
];

pub fn element_symbol(z: u32) -> Option<&'static str> {
    ELEMENTS.get((z as usize).checked_sub(1)?).map(|e| e.0)
}

pub fn atomic_number(symbol: &str) -> Option<u32> {
    ELEMENTS
        .iter()
        .position(|(s, _)| s.eq_ignore_ascii_case(symbol))
        .map(|i| i as u32 + 1)
}

pub fn default_mass(z: u32) -> Option<f64> {
    ELEMENTS.get((z as usize).checked_sub(1)?).map(|e| e.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    atomic_numbers: Vec<u32>,
    positions: Vec<[f64; 3]>,
    masses: Vec<f64>,
}

impl Molecule {
    /// Molecule with masses taken from the element table.
    pub fn new(atomic_numbers: Vec<u32>, positions: Vec<[f64; 3]>) -> Result<Self, Error> {
        let masses = atomic_numbers
            .iter()
            .map(|&z| default_mass(z).ok_or(Error::UnknownElement(z.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::with_masses(atomic_numbers, positions, masses)
    }

    pub fn with_masses(atomic_numbers: Vec<u32>, positions: Vec<[f64; 3]>, masses: Vec<f64>) -> Result<Self, Error> {
        let n = atomic_numbers.len();
        if n == 0 {
            return Err(Error::InvalidMolecule("no atoms".into()));
        }
        if positions.len() != n || masses.len() != n {
            return Err(Error::InvalidMolecule(format!(
                "{n} atomic numbers, {} positions, {} masses",
                positions.len(),
                masses.len()
            )));
        }
        if let Some(i) = atomic_numbers.iter().position(|&z| z == 0) {
            return Err(Error::InvalidMolecule(format!("atom {i} has atomic number 0")));
        }
        if let Some(i) = masses.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidMolecule(format!("atom {i} has non-positive mass")));
        }
        if positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMolecule("non-finite coordinate".into()));
        }
        let mol = Self {
            atomic_numbers,
            positions,
            masses,
        };
        if let Some((i, j)) = mol.find_coincident() {
            return Err(Error::CoincidentAtoms(i, j));
        }
        Ok(mol)
    }

    fn find_coincident(&self) -> Option<(usize, usize)> {
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.distance(i, j) <= COINCIDENT_TOL {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atomic_numbers.is_empty()
    }

    pub fn atomic_numbers(&self) -> &[u32] {
        &self.atomic_numbers
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn flat_positions(&self) -> Vec<f64> {
        self.positions.iter().flatten().copied().collect()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.positions[i], self.positions[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Same atoms and masses at new flat coordinates.
    pub fn with_flat_positions(&self, x: &[f64]) -> Result<Self, Error> {
        if x.len() != 3 * self.len() {
            return Err(Error::ShapeMismatch {
                expected: 3 * self.len(),
                got: x.len(),
            });
        }
        let positions = x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::with_masses(self.atomic_numbers.clone(), positions, self.masses.clone())
    }

    /// Relabel atoms: new atom `k` is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, Error> {
        Self::with_masses(
            perm.iter().map(|&i| self.atomic_numbers[i]).collect(),
            perm.iter().map(|&i| self.positions[i]).collect(),
            perm.iter().map(|&i| self.masses[i]).collect(),
        )
    }

    pub fn transformed(&self, rot: &crate::irreps::Rotation, shift: [f64; 3]) -> Self {
        let positions = self
            .positions
            .iter()
            .map(|p| {
                let r = rot.apply(*p);
                [r[0] + shift[0], r[1] + shift[1], r[2] + shift[2]]
            })
            .collect();
        Self {
            atomic_numbers: self.atomic_numbers.clone(),
            positions,
            masses: self.masses.clone(),
        }
    }
}

/// Directed edge `i <- j` with displacement `r_ij = r_j - r_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub vector: [f64; 3],
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub n_atoms: usize,
    pub cutoff: f64,
    pub edges: Vec<Edge>,
}

/// All ordered pairs within `cutoff`, grouped by `i` and ordered within a
/// group by displacement vector, so that neighbor sums do not depend on
/// atom numbering.
pub fn build_graph(mol: &Molecule, cutoff: f64) -> Result<Graph, Error> {
    if !(cutoff > 0.0) {
        return Err(Error::InvalidConfig(format!("cutoff must be positive, got {cutoff}")));
    }
    let mut edges = Vec::new();
    let pos = mol.positions();
    for i in 0..mol.len() {
        for j in 0..mol.len() {
            if i == j {
                continue;
            }
            let v = [pos[j][0] - pos[i][0], pos[j][1] - pos[i][1], pos[j][2] - pos[i][2]];
            let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if d <= COINCIDENT_TOL {
                return Err(Error::CoincidentAtoms(i.min(j), i.max(j)));
            }
            if d <= cutoff {
                edges.push(Edge {
                    i,
                    j,
                    vector: v,
                    distance: d,
                });
            }
        }
    }
    edges.sort_by(|a, b| {
        a.i.cmp(&b.i).then_with(|| {
            (0..3)
                .map(|c| a.vector[c].total_cmp(&b.vector[c]))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(Graph {
        n_atoms: mol.len(),
        cutoff,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_lookups() {
        assert_eq!(atomic_number("O"), Some(8));
        assert_eq!(atomic_number("cl"), Some(17));
        assert_eq!(element_symbol(1), Some("H"));
        assert_eq!(default_mass(0), None);
        assert!((default_mass(8).unwrap() - 15.999).abs() < 1e-12);
    }

    #[test]
    fn rejects_coincident_atoms() {
        let err = Molecule::new(vec![1, 1], vec![[0.0; 3], [0.0, 0.0, 1e-7]]).unwrap_err();
        assert!(matches!(err, Error::CoincidentAtoms(0, 1)));
    }

    #[test]
    fn rejects_empty_and_bad_masses() {
        assert!(Molecule::new(vec![], vec![]).is_err());
        assert!(Molecule::with_masses(vec![1], vec![[0.0; 3]], vec![0.0]).is_err());
    }

    #[test]
    fn dimer_inside_and_outside_cutoff() {
        let near = Molecule::new(vec![1, 1], vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(build_graph(&near, 6.0).unwrap().edges.len(), 2);
        let far = Molecule::new(vec![1, 1], vec![[0.0; 3], [7.0, 0.0, 0.0]]).unwrap();
        assert!(build_graph(&far, 6.0).unwrap().edges.is_empty());
    }

    #[test]
    fn edges_match_brute_force_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pos: Vec<[f64; 3]> = (0..8)
            .map(|_| std::array::from_fn(|_| rng.random_range(-4.0..4.0)))
            .collect();
        let mol = Molecule::new(vec![6; 8], pos.clone()).unwrap();
        let g = build_graph(&mol, 4.5).unwrap();
        let mut expected = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                let d: f64 = (0..3).map(|k| (pos[i][k] - pos[j][k]).powi(2)).sum::<f64>().sqrt();
                if i != j && d <= 4.5 {
                    expected.push((i, j));
                }
            }
        }
        let mut got: Vec<_> = g.edges.iter().map(|e| (e.i, e.j)).collect();
        assert!(got.windows(2).all(|w| w[0].0 <= w[1].0));
        got.sort();
        assert_eq!(got, expected);
        for e in &g.edges {
            assert!(g.edges.iter().any(|f| f.i == e.j && f.j == e.i));
        }
    }
}
