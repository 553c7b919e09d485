//! Reference parameter set used by the bundled `table1` preset.
//!
//! Charges and masses use the rounded value 1.6e-19 C for the elementary
//! charge and 1.6e-27 kg for the atomic mass unit.

use crate::constants::hz;
use crate::cooling::DissipationParams;
use crate::trap_model::{ParticleSpec, TrapConfiguration};

pub const E_ROUNDED: f64 = 1.6e-19;

pub fn trap() -> TrapConfiguration {
    TrapConfiguration {
        electrode_distance: [0.9e-3, 0.9e-3, 1.7e-3],
        geometric_factor: [0.93, 0.93, 0.38],
        u_dc: [3.2, -3.2, 56.5],
        u_slow: [80.0, -80.0, 0.0],
        u_fast: [1350.0, -1350.0, 0.0],
        omega_slow: hz(7e3),
        omega_fast: hz(17.5e6),
    }
}

pub fn nanoparticle() -> ParticleSpec {
    ParticleSpec {
        mass: 2.0e-17,
        charge: 750.0 * E_ROUNDED,
        radius: 134e-9,
        permittivity: 2.11,
    }
}

pub fn ion() -> ParticleSpec {
    ParticleSpec {
        mass: 40.0 * 1.6e-27,
        charge: E_ROUNDED,
        radius: 0.0,
        permittivity: 1.0,
    }
}

/// Environment, cooling and probe parameters. Trap-displacement heating is
/// on and feedback is off; gas damping follows the kinetic formula.
pub fn dissipation() -> DissipationParams {
    DissipationParams {
        temperature: 300.0,
        pressure: 7e-11 * 100.0,
        gas_damping_override: None,
        feedback_damping: 0.0,
        doppler_damping: hz(10e3),
        doppler_heating_power: 3.8e-22,
        trap_heating_power: 2.8e-26,
        probe_wavelength: 780e-9,
        feedback_constant: 1.57e-6,
        zeta: 7.0,
    }
}

/// Gas damping rate quoted alongside the reference parameters (rad/s).
pub fn quoted_gas_damping() -> f64 {
    hz(44.5e-9)
}
