//! Real spherical harmonics.
//!
//! Convention: L2-orthonormal over the unit sphere, components ordered
//! `m = -l..=l`, and
//!
//! ```text
//! Y_{l,0}   = N_l0 P_l(z)
//! Y_{l,m>0} = sqrt(2) N_lm P_l^(m)(z) Re((x + iy)^m)
//! Y_{l,m<0} = sqrt(2) N_l|m| P_l^(|m|)(z) Im((x + iy)^|m|)
//! ```
//!
//! where `P_l^(m)` is the m-th derivative of the Legendre polynomial. This
//! is the real form of the Condon-Shortley complex harmonics, so the degree-1
//! harmonics are `sqrt(3 / 4pi) * (y, z, x)`.

use std::f64::consts::PI;

use nalgebra::Matrix3;

use super::IrrepsError;

const UNIT_TOL: f64 = 1e-9;

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Coefficients (ascending powers) of the m-th derivative of `P_l`.
fn legendre_derivative_coeffs(l: usize, m: usize) -> Vec<f64> {
    let mut coeffs = vec![0.0; l + 1];
    for k in 0..=l / 2 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        coeffs[l - 2 * k] = sign * binomial(l, k) * binomial(2 * l - 2 * k, l) / 2f64.powi(l as i32);
    }
    for _ in 0..m {
        coeffs = (1..coeffs.len())
            .map(|p| coeffs[p] * p as f64)
            .collect();
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
    }
    coeffs
}

fn horner(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
}

fn normalization(l: usize, m: usize) -> f64 {
    ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - m) / factorial(l + m)).sqrt()
}

/// Real spherical harmonics of degree `l` at the unit vector `u`.
pub fn real_sph_harm(l: usize, u: [f64; 3]) -> Result<Vec<f64>, IrrepsError> {
    let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(IrrepsError::NotUnit(norm));
    }
    Ok(real_sph_harm_unchecked(l, u))
}

pub(crate) fn real_sph_harm_unchecked(l: usize, u: [f64; 3]) -> Vec<f64> {
    let [x, y, z] = u;
    let mut out = vec![0.0; 2 * l + 1];
    // (x + iy)^m built incrementally
    let (mut re, mut im) = (1.0, 0.0);
    for m in 0..=l {
        let radial = normalization(l, m) * horner(&legendre_derivative_coeffs(l, m), z);
        if m == 0 {
            out[l] = radial;
        } else {
            out[l + m] = std::f64::consts::SQRT_2 * radial * re;
            out[l - m] = std::f64::consts::SQRT_2 * radial * im;
        }
        let next_re = re * x - im * y;
        im = re * y + im * x;
        re = next_re;
    }
    out
}

/// All degrees `0..=l_max` concatenated.
pub fn real_sph_harm_all(l_max: usize, u: [f64; 3]) -> Result<Vec<f64>, IrrepsError> {
    let mut out = Vec::with_capacity((l_max + 1) * (l_max + 1));
    for l in 0..=l_max {
        out.extend(real_sph_harm(l, u)?);
    }
    Ok(out)
}

/// Change of basis from Cartesian `(x, y, z)` to the degree-1 real basis
/// `(m=-1, m=0, m=1) = (y, z, x)`: `v_sph = P v_cart`.
pub fn cartesian_to_l1() -> Matrix3<f64> {
    Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0)
}

pub fn cart_to_l1(v: [f64; 3]) -> [f64; 3] {
    [v[1], v[2], v[0]]
}

pub fn l1_to_cart(v: &[f64]) -> [f64; 3] {
    [v[2], v[0], v[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|x| x / n)
    }

    #[test]
    fn degree_zero_is_constant() {
        let y = real_sph_harm(0, [0.6, 0.0, 0.8]).unwrap();
        assert_eq!(y.len(), 1);
        assert!((y[0] - 0.5 / PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degree_one_on_z_axis_is_axial() {
        let y = real_sph_harm(1, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(y[0], 0.0);
        assert_eq!(y[2], 0.0);
        assert!((y[1] - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degree_one_matches_cartesian_order() {
        let u = [0.48, -0.6, 0.64];
        let y = real_sph_harm(1, u).unwrap();
        let c = (3.0 / (4.0 * PI)).sqrt();
        let p = cart_to_l1(u);
        for k in 0..3 {
            assert!((y[k] - c * p[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_unit_input() {
        assert!(matches!(
            real_sph_harm(2, [1.0, 1.0, 0.0]),
            Err(IrrepsError::NotUnit(_))
        ));
    }

    /// Gauss-Legendre in cos(theta) times a uniform grid in phi integrates
    /// products of harmonics up to degree 8 exactly.
    fn quadrature_gram(l_a: usize, l_b: usize) -> Vec<Vec<f64>> {
        // 8-point Gauss-Legendre nodes/weights on [-1, 1]
        let nodes = [
            -0.960_289_856_497_536_2,
            -0.796_666_477_413_626_7,
            -0.525_532_409_916_329_0,
            -0.183_434_642_495_649_8,
            0.183_434_642_495_649_8,
            0.525_532_409_916_329_0,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_2,
        ];
        let weights = [
            0.101_228_536_290_376_3,
            0.222_381_034_453_374_5,
            0.313_706_645_877_887_3,
            0.362_683_783_378_362_0,
            0.362_683_783_378_362_0,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_5,
            0.101_228_536_290_376_3,
        ];
        let n_phi = 16;
        let mut gram = vec![vec![0.0; 2 * l_b + 1]; 2 * l_a + 1];
        for (z, w) in nodes.iter().zip(weights) {
            let s = (1.0f64 - z * z).sqrt();
            for k in 0..n_phi {
                let phi = 2.0 * PI * k as f64 / n_phi as f64;
                let u = [s * phi.cos(), s * phi.sin(), *z];
                let ya = real_sph_harm(l_a, u).unwrap();
                let yb = real_sph_harm(l_b, u).unwrap();
                let dw = w * 2.0 * PI / n_phi as f64;
                for i in 0..ya.len() {
                    for j in 0..yb.len() {
                        gram[i][j] += dw * ya[i] * yb[j];
                    }
                }
            }
        }
        gram
    }

    #[test]
    fn orthonormal_under_quadrature() {
        for la in 0..=3 {
            for lb in 0..=3 {
                let g = quadrature_gram(la, lb);
                for (i, row) in g.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        let expected = if la == lb && i == j { 1.0 } else { 0.0 };
                        assert!(
                            (v - expected).abs() < 1e-8,
                            "l=({la},{lb}) ({i},{j}) -> {v}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn addition_theorem_holds_for_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = random_unit(&mut rng);
            for l in 0..=4 {
                let y = real_sph_harm(l, u).unwrap();
                let s: f64 = y.iter().map(|v| v * v).sum();
                assert!((s - (2 * l + 1) as f64 / (4.0 * PI)).abs() < 1e-12);
            }
        }
    }
}
