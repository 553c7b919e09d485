use std::f64::consts::PI;

use nalgebra::DMatrix;
use nanotrap::constants::HBAR;
use nanotrap::cooling::{DissipationParams, DissipationRates};
use nanotrap::equilibrium::*;
use nanotrap::floquet::*;
use nanotrap::linear_system::*;
use nanotrap::reference;
use nanotrap::trap_model::{Axis, SecularMethod};

fn spec() -> SystemSpec {
    SystemSpec::new(
        reference::trap(),
        reference::nanoparticle(),
        reference::ion(),
        1,
        SecularMethod::Auto,
    )
    .unwrap()
    .0
}

fn params() -> DissipationParams {
    DissipationParams {
        gas_damping_override: Some(reference::quoted_gas_damping()),
        ..reference::dissipation()
    }
}

/// Reference two-body system, optionally with dissipation.
fn reference_system(dissipative: bool) -> TimeDependentSystem {
    let s = spec();
    let c = two_body_equilibrium(&s, Axis::Z).unwrap();
    let sys = build_linearized_system(&c, &s).unwrap();
    let (rates, _) = DissipationRates::evaluate(&params(), &sys, &s.nanoparticle).unwrap();
    build_time_dependent_system(&sys, &s, dissipative.then_some(&rates)).unwrap()
}

fn axis_block(sys: &TimeDependentSystem, axis: Axis) -> TimeDependentSystem {
    let (block, _) = sys.find_block(1, axis).unwrap();
    sys.block(&block)
}

/// One coordinate with `W(t) = (ω_f²/4)(a + 2q cos ω_f t)` and `ω_f = 10 ω_s`.
fn mathieu(a: f64, q: f64) -> TimeDependentSystem {
    let omega_f = 2.0 * PI * 1e6;
    let mut sys = single_particle_system(&reference::trap(), &reference::nanoparticle(), Axis::X);
    sys.omega_fast = omega_f;
    sys.omega_slow = omega_f / 10.0;
    let c = &mut sys.coords[0];
    c.stiffness = 1.0;
    c.u_dc = 0.25 * omega_f * omega_f * a;
    c.u_slow = 0.0;
    c.u_fast = 0.5 * omega_f * omega_f * q;
    sys
}

fn symplectic_form(n: usize) -> DMatrix<f64> {
    let m = n / 2;
    DMatrix::from_fn(n, n, |i, j| {
        if j == i + m {
            1.0
        } else if i == j + m {
            -1.0
        } else {
            0.0
        }
    })
}

fn rel_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn constant_block_matches_matrix_exponential() {
    let z = axis_block(&reference_system(true), Axis::Z);
    assert!(z.is_constant());
    let exact = constant_monodromy(&z);
    let integrated = integrate_monodromy(&z, &FloquetSettings::default()).unwrap();
    assert!(rel_norm(&integrated.phi, &exact.phi) < 1e-8);
}

#[test]
fn stable_mathieu_multipliers_lie_on_unit_circle() {
    let sys = mathieu(0.0, 0.2);
    let mono = integrate_monodromy(&sys, &FloquetSettings::default()).unwrap();
    for z in &mono.multipliers {
        assert!((z.norm() - 1.0).abs() < 1e-6, "{z}");
    }
    assert!(floquet_stability(&mono));
    assert!((mono.phi.determinant() - 1.0).abs() < 1e-8);
}

#[test]
fn unstable_mathieu_is_detected() {
    // Inside the first instability tongue.
    let sys = mathieu(0.0, 1.0);
    let mono = integrate_monodromy(&sys, &FloquetSettings::default()).unwrap();
    assert!(!floquet_stability(&mono));
    assert!((mono.phi.determinant() - 1.0).abs() < 1e-6);
}

#[test]
fn dissipation_free_monodromy_is_symplectic() {
    let full = reference_system(false);
    for axis in [Axis::X, Axis::Y] {
        let block = axis_block(&full, axis);
        let mono = integrate_monodromy(&block, &FloquetSettings::default()).unwrap();
        let j = symplectic_form(mono.phi.nrows());
        let err = (mono.phi.transpose() * &j * &mono.phi - &j).amax();
        assert!(err < 1e-6, "{axis}: {err:e}");
        assert!(floquet_stability(&mono));
    }
}

#[test]
fn reference_equilibrium_passes_screen() {
    let s = spec();
    let c = two_body_equilibrium(&s, Axis::Z).unwrap();
    assert!(screen_configuration(&s, &c.positions()).unwrap());
}

#[test]
fn periodic_solution_and_physical_purity() {
    let x = axis_block(&reference_system(true), Axis::X);
    let settings = FloquetSettings {
        grid_points: 200,
        ..FloquetSettings::default()
    };
    let sol = periodic_steady_state(&x, &settings).unwrap();
    assert!(sol.stable);
    assert!(sol.periodicity_error < 1e-6, "{:e}", sol.periodicity_error);
    let k = x.coords.iter().position(|c| c.is_particle).unwrap();
    let p = time_averaged_purity(&sol, k).unwrap();
    assert!(p.purity <= 1.0 && p.purity > 0.0);
    assert!(p.n_eff >= 0.0);
    assert!(p.kinetic.iter().all(|e| *e > 0.0));
    // The first and last samples describe the same instant.
    assert!(rel_norm(&sol.covariance[0], sol.covariance.last().unwrap()) < 1e-6);
}

#[test]
fn static_axis_is_immune_to_micromotion() {
    let full = reference_system(true);
    let settings = FloquetSettings {
        grid_points: 50,
        ..FloquetSettings::default()
    };
    let (with, _) = particle_occupation(&full, 1, Axis::Z, &settings).unwrap();
    let (without, _) = particle_occupation(&full.secular(), 1, Axis::Z, &settings).unwrap();
    assert!(((with.n_eff - without.n_eff) / without.n_eff).abs() < 1e-6);
}

#[test]
fn static_covariance_matches_lyapunov_solution() {
    let z = axis_block(&reference_system(true), Axis::Z);
    let direct = periodic_steady_state(&z, &FloquetSettings::default()).unwrap();
    let forced = FloquetSettings {
        force_integration: true,
        grid_points: 20,
        ..FloquetSettings::default()
    };
    let integrated = periodic_steady_state(&z, &forced).unwrap();
    for cov in &integrated.covariance {
        assert!(rel_norm(cov, &direct.covariance[0]) < 1e-6);
    }
}

/// A lone static coordinate whose bath gives `Σ = (D/γ) 1`.
fn thermal_oscillator(diffusion_over_damping: f64) -> TimeDependentSystem {
    let z = axis_block(&reference_system(false), Axis::Z);
    let k = z.coords.iter().position(|c| c.is_particle).unwrap();
    let mut lone = z.block(&[k]);
    lone.coulomb[(0, 0)] = 0.0;
    let c = &mut lone.coords[0];
    c.omega_prime = c.secular_sq.sqrt();
    c.r_zpf = (HBAR / (2.0 * c.mass * c.omega_prime)).sqrt();
    c.p_zpf = (0.5 * HBAR * c.mass * c.omega_prime).sqrt();
    lone.damping = vec![1e3];
    lone.diffusion_q = vec![1e3 * diffusion_over_damping];
    lone.diffusion_p = vec![1e3 * diffusion_over_damping];
    lone
}

#[test]
fn thermal_state_purity() {
    let sol = periodic_steady_state(&thermal_oscillator(21.0), &FloquetSettings::default()).unwrap();
    let p = time_averaged_purity(&sol, 0).unwrap();
    assert!((p.purity - 1.0 / 21.0).abs() < 1e-9);
    assert!((p.n_eff - 10.0).abs() < 1e-7);
    assert!((purity_to_occupation(1.0 / 21.0) - 10.0).abs() < 1e-12);
}

#[test]
fn ground_state_purity() {
    let sol = periodic_steady_state(&thermal_oscillator(1.0), &FloquetSettings::default()).unwrap();
    let p = time_averaged_purity(&sol, 0).unwrap();
    assert!((p.purity - 1.0).abs() < 1e-9);
    assert!(p.n_eff.abs() < 1e-8);
}

#[test]
fn sub_vacuum_covariance_is_rejected() {
    let sol = periodic_steady_state(&thermal_oscillator(0.5), &FloquetSettings::default()).unwrap();
    assert!(time_averaged_purity(&sol, 0).is_err());
}

#[test]
fn coarse_resolution_is_rejected() {
    let settings = FloquetSettings {
        steps_per_fast_period: 100.0,
        ..FloquetSettings::default()
    };
    assert!(matches!(
        integrate_monodromy(&mathieu(0.0, 0.2), &settings),
        Err(FloquetError::ResolutionTooCoarse(_))
    ));
}

#[test]
fn commensurate_rounding() {
    let (w, warn) = commensurate_fast_frequency(2.0 * PI * 7e3, 2.0 * PI * 17.5e6);
    assert_eq!(w, 2.0 * PI * 17.5e6);
    assert!(warn.is_none());
    let (w, warn) = commensurate_fast_frequency(2.0 * PI * 7e3, 2.0 * PI * 17.5012e6);
    assert!((w / (2.0 * PI * 7e3) - 2500.0).abs() < 1e-9);
    assert!(warn.is_some());
}
