//! Physical constants in SI units.

use std::f64::consts::PI;

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380_649e-23;
/// Vacuum permittivity (F/m).
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Speed of light (m/s).
pub const C_LIGHT: f64 = 299_792_458.0;
/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Mass of a nitrogen molecule used for gas damping (kg).
pub const NITROGEN_MASS: f64 = 4.65e-26;

/// Coulomb constant 1/(4 pi eps0).
pub fn coulomb_k() -> f64 {
    1.0 / (4.0 * PI * EPSILON_0)
}

/// Converts a frequency in Hz to an angular frequency in rad/s.
pub fn hz(f: f64) -> f64 {
    2.0 * PI * f
}

/// Converts an angular frequency in rad/s to Hz.
pub fn to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}
