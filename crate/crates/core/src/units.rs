//! Physical constants (CODATA 2018) and the conversions derived from them.

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Planck constant, J s (exact).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Elementary charge, C (exact).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Electron mass, kg.
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
/// Fine-structure constant.
pub const FINE_STRUCTURE: f64 = 7.297_352_569_3e-3;
/// Atomic mass constant, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

pub fn hbar() -> f64 {
    PLANCK / (2.0 * std::f64::consts::PI)
}

/// Reduced Planck constant in eV s.
pub fn hbar_ev_s() -> f64 {
    hbar() / ELEMENTARY_CHARGE
}

/// Hartree energy in eV: `alpha^2 m_e c^2 / e`.
pub fn hartree_ev() -> f64 {
    FINE_STRUCTURE * FINE_STRUCTURE * ELECTRON_MASS * SPEED_OF_LIGHT * SPEED_OF_LIGHT / ELEMENTARY_CHARGE
}

/// Bohr radius in Angstrom: `hbar / (m_e c alpha)`.
pub fn bohr_angstrom() -> f64 {
    hbar() / (ELECTRON_MASS * SPEED_OF_LIGHT * FINE_STRUCTURE) * 1e10
}

/// Hartree/Bohr expressed in eV/A.
pub fn hartree_per_bohr_ev_per_angstrom() -> f64 {
    hartree_ev() / bohr_angstrom()
}

/// Factor turning a mass-weighted curvature in eV/(A^2 amu) into s^-2.
pub fn curvature_to_s2() -> f64 {
    ELEMENTARY_CHARGE / (1e-20 * AMU)
}

/// Angular frequency (rad/s) to wavenumber (1/cm).
pub fn angular_to_wavenumber(omega: f64) -> f64 {
    omega / (2.0 * std::f64::consts::PI * SPEED_OF_LIGHT * 100.0)
}
