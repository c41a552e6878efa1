//! Clebsch-Gordan coefficients in the real spherical-harmonic basis.

use std::sync::OnceLock;

use nalgebra::Complex;

use super::sph::factorial;
use super::IrrepsError;

/// Largest degree accepted by [`clebsch_gordan`] for any of its arguments.
pub const SUPPORTED_L_MAX: usize = 6;

/// Real coupling tensor `C[m1][m2][m3]`, stored flat in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct CgTensor {
    pub l1: usize,
    pub l2: usize,
    pub l3: usize,
    coeffs: Vec<f64>,
}

impl CgTensor {
    #[inline]
    pub fn get(&self, m1: usize, m2: usize, m3: usize) -> f64 {
        let (d2, d3) = (2 * self.l2 + 1, 2 * self.l3 + 1);
        self.coeffs[(m1 * d2 + m2) * d3 + m3]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    /// `out[m3] = sum C[m1][m2][m3] a[m1] b[m2]`
    pub fn contract(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let d3 = 2 * self.l3 + 1;
        let mut out = vec![0.0; d3];
        for (m1, av) in a.iter().enumerate() {
            for (m2, bv) in b.iter().enumerate() {
                let ab = av * bv;
                if ab == 0.0 {
                    continue;
                }
                let base = (m1 * (2 * self.l2 + 1) + m2) * d3;
                for (m3, o) in out.iter_mut().enumerate() {
                    *o += self.coeffs[base + m3] * ab;
                }
            }
        }
        out
    }
}

/// Condon-Shortley coefficient <l1 mu1 l2 mu2 | l3 mu3> (Racah formula).
fn complex_cg(l1: i64, mu1: i64, l2: i64, mu2: i64, l3: i64, mu3: i64) -> f64 {
    if mu1 + mu2 != mu3 || l3 < (l1 - l2).abs() || l3 > l1 + l2 {
        return 0.0;
    }
    if mu1.abs() > l1 || mu2.abs() > l2 || mu3.abs() > l3 {
        return 0.0;
    }
    let f = |n: i64| factorial(n as usize);
    let pre = ((2 * l3 + 1) as f64 * f(l3 + l1 - l2) * f(l3 - l1 + l2) * f(l1 + l2 - l3)
        / f(l1 + l2 + l3 + 1))
    .sqrt();
    let pre2 =
        (f(l3 + mu3) * f(l3 - mu3) * f(l1 - mu1) * f(l1 + mu1) * f(l2 - mu2) * f(l2 + mu2)).sqrt();
    let k_min = 0.max(l2 - l3 - mu1).max(l1 - l3 + mu2);
    let k_max = (l1 + l2 - l3).min(l1 - mu1).min(l2 + mu2);
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign
            / (f(k)
                * f(l1 + l2 - l3 - k)
                * f(l1 - mu1 - k)
                * f(l2 + mu2 - k)
                * f(l3 - l2 + mu1 + k)
                * f(l3 - l1 - mu2 + k));
    }
    pre * pre2 * sum
}

/// Unitary `U` with `Y_real = U Y_complex`; rows indexed by real m, columns
/// by complex mu, both offset by `l`.
fn real_from_complex(l: usize) -> Vec<Vec<Complex<f64>>> {
    let d = 2 * l + 1;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = vec![vec![Complex::new(0.0, 0.0); d]; d];
    let li = l as i64;
    for m in -li..=li {
        let row = (m + li) as usize;
        let col = |mu: i64| (mu + li) as usize;
        let parity = if m.abs() % 2 == 0 { 1.0 } else { -1.0 };
        match m.cmp(&0) {
            std::cmp::Ordering::Equal => u[row][col(0)] = Complex::new(1.0, 0.0),
            std::cmp::Ordering::Greater => {
                u[row][col(m)] = Complex::new(parity * s, 0.0);
                u[row][col(-m)] = Complex::new(s, 0.0);
            }
            std::cmp::Ordering::Less => {
                u[row][col(m)] = Complex::new(0.0, s);
                u[row][col(-m)] = Complex::new(0.0, -parity * s);
            }
        }
    }
    u
}

fn compute_real_cg(l1: usize, l2: usize, l3: usize) -> CgTensor {
    let (d1, d2, d3) = (2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1);
    let mut coeffs = vec![0.0; d1 * d2 * d3];
    if l3 < l1.abs_diff(l2) || l3 > l1 + l2 {
        return CgTensor {
            l1,
            l2,
            l3,
            coeffs,
        };
    }
    let (u1, u2, u3) = (real_from_complex(l1), real_from_complex(l2), real_from_complex(l3));
    let (i1, i2, i3) = (l1 as i64, l2 as i64, l3 as i64);
    let mut complex = vec![Complex::new(0.0, 0.0); d1 * d2 * d3];
    for m1 in 0..d1 {
        for m2 in 0..d2 {
            for m3 in 0..d3 {
                let mut acc = Complex::new(0.0, 0.0);
                for mu1 in -i1..=i1 {
                    let a = u1[m1][(mu1 + i1) as usize].conj();
                    if a.norm() == 0.0 {
                        continue;
                    }
                    for mu2 in -i2..=i2 {
                        let b = u2[m2][(mu2 + i2) as usize].conj();
                        if b.norm() == 0.0 {
                            continue;
                        }
                        let mu3 = mu1 + mu2;
                        if mu3.abs() > i3 {
                            continue;
                        }
                        let c = u3[m3][(mu3 + i3) as usize];
                        let cg = complex_cg(i1, mu1, i2, mu2, i3, mu3);
                        acc += a * b * c * cg;
                    }
                }
                complex[(m1 * d2 + m2) * d3 + m3] = acc;
            }
        }
    }
    // The real-basis tensor is real up to a global phase of i.
    let re: f64 = complex.iter().map(|c| c.re * c.re).sum();
    let im: f64 = complex.iter().map(|c| c.im * c.im).sum();
    let take_re = re >= im;
    for (dst, c) in coeffs.iter_mut().zip(&complex) {
        let v = if take_re { c.re } else { c.im };
        *dst = if v.abs() < 1e-15 { 0.0 } else { v };
    }
    CgTensor {
        l1,
        l2,
        l3,
        coeffs,
    }
}

fn table() -> &'static [OnceLock<CgTensor>] {
    const N: usize = SUPPORTED_L_MAX + 1;
    static TABLE: OnceLock<Vec<OnceLock<CgTensor>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..N * N * N).map(|_| OnceLock::new()).collect())
}

/// Real-basis Clebsch-Gordan tensor for `l1 x l2 -> l3`.
///
/// Zero outside the triangle `|l1 - l2| <= l3 <= l1 + l2`. For fixed `l3`
/// the columns are orthonormal: `sum_{m1,m2} C[m1][m2][m3] C[m1][m2][m3'] = delta`.
pub fn clebsch_gordan(l1: usize, l2: usize, l3: usize) -> Result<&'static CgTensor, IrrepsError> {
    let n = SUPPORTED_L_MAX + 1;
    if l1 >= n || l2 >= n || l3 >= n {
        return Err(IrrepsError::UnsupportedDegree(l1.max(l2).max(l3)));
    }
    Ok(table()[(l1 * n + l2) * n + l3].get_or_init(|| compute_real_cg(l1, l2, l3)))
}
