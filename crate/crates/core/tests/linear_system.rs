use nalgebra::{DMatrix, Matrix2};
use nanotrap::constants::{to_hz, HBAR};
use nanotrap::equilibrium::*;
use nanotrap::linear_system::*;
use nanotrap::reference;
use nanotrap::trap_model::{Axis, SecularMethod};

fn spec(n_ions: usize) -> SystemSpec {
    SystemSpec::new(
        reference::trap(),
        reference::nanoparticle(),
        reference::ion(),
        n_ions,
        SecularMethod::Auto,
    )
    .unwrap()
    .0
}

fn two_body() -> (SystemSpec, LinearizedSystem) {
    let s = spec(1);
    let c = two_body_equilibrium(&s, Axis::Z).unwrap();
    let sys = build_linearized_system(&c, &s).unwrap();
    (s, sys)
}

fn chain(n: usize) -> (SystemSpec, LinearizedSystem) {
    let s = spec(n);
    let settings = SearchSettings {
        restarts: 100 * n,
        axis_restricted: true,
        floquet_check: false,
        ..SearchSettings::default()
    };
    let outcome = find_equilibria(&s, &settings).unwrap();
    let c = outcome.stable()[0].clone();
    let sys = build_linearized_system(&c, &s).unwrap();
    (s, sys)
}

#[test]
fn potential_matrix_sign_structure_on_z() {
    let (s, sys) = two_body();
    let v = &sys.potential;
    let (i, p) = (0, sys.particle());
    for axis in Axis::ALL {
        let a = coord(i, axis);
        let b = coord(p, axis);
        let k = s.ion.mass * s.omega_ion[axis.index()].powi(2);
        if axis == Axis::Z {
            // Longitudinal: Coulomb stiffens the diagonal, off-diagonal negative.
            assert!(v[(a, b)] < 0.0);
            assert!(v[(a, a)] > k);
        } else {
            assert!(v[(a, b)] > 0.0);
            assert!(v[(a, a)] < k);
        }
        // Translation invariance of the Coulomb part.
        let kp = s.nanoparticle.mass * s.omega_particle[axis.index()].powi(2);
        assert!(((v[(a, a)] - k) + v[(a, b)]).abs() < 1e-9 * k);
        assert!(((v[(b, b)] - kp) + v[(a, b)]).abs() < 1e-9 * kp);
    }
    assert!((v - v.transpose()).amax() == 0.0);
}

#[test]
fn on_axis_layout_decouples_cartesian_blocks() {
    let (_, sys) = two_body();
    let mut blocks = sys.coupling_blocks();
    blocks.sort();
    assert_eq!(blocks, vec![vec![0, 3], vec![1, 4], vec![2, 5]]);
}

#[test]
fn two_body_mode_frequencies_match_closed_form() {
    let (_, sys) = two_body();
    let report = dynamical_stability(&sys);
    assert!(report.stable);
    let mut expected = Vec::new();
    for axis in Axis::ALL {
        let (a, b) = (coord(0, axis), coord(1, axis));
        let (mi, mp) = (sys.masses[0], sys.masses[1]);
        let v = &sys.potential;
        let w = Matrix2::new(
            v[(a, a)] / mi,
            v[(a, b)] / (mi * mp).sqrt(),
            v[(a, b)] / (mi * mp).sqrt(),
            v[(b, b)] / mp,
        );
        let tr = w.trace();
        let disc = (tr * tr / 4.0 - w.determinant()).sqrt();
        expected.extend([tr / 2.0 - disc, tr / 2.0 + disc]);
    }
    expected.sort_by(|a, b| a.total_cmp(b));
    for (got, want) in report.squared_frequencies.iter().zip(&expected) {
        assert!(((got - want) / want).abs() < 1e-9, "{got:e} vs {want:e}");
    }
    assert_eq!(report.eigenvalues.len(), 12);
    for pair in report.eigenvalues.chunks(2) {
        assert_eq!(pair[0], -pair[1]);
        assert_eq!(pair[0].re, 0.0);
    }
}

#[test]
fn x_layout_is_dynamically_unstable() {
    let s = spec(1);
    let c = two_body_equilibrium(&s, Axis::X).unwrap();
    let sys = build_linearized_system(&c, &s).unwrap();
    let report = dynamical_stability(&sys);
    assert!(!report.stable);
    assert!(report.squared_frequencies[0] < 0.0);
    assert!(report.eigenvalues.iter().any(|z| z.re > 0.0));
}

#[test]
fn reference_two_body_couplings() {
    let (_, sys) = two_body();
    let g = two_body_couplings(&sys).unwrap();
    // Direct evaluation of V R_i R_p / hbar for the z coordinates.
    let p = sys.particle();
    let v = sys.potential[(coord(0, Axis::Z), coord(p, Axis::Z))];
    let wi = (sys.potential[(2, 2)] / sys.masses[0]).sqrt();
    let wp = (sys.potential[(5, 5)] / sys.masses[p]).sqrt();
    let ri = (HBAR / (2.0 * sys.masses[0] * wi)).sqrt();
    let rp = (HBAR / (2.0 * sys.masses[p] * wp)).sqrt();
    assert!(((g[2] - v * ri * rp / HBAR) / g[2]).abs() < 1e-14);
    assert!(g[2] < 0.0 && g[0] > 0.0 && g[1] > 0.0);
    // On-axis geometry: the transverse rates are half the longitudinal one
    // up to the frequency factors.
    let ratio = |axis: Axis| {
        let wi = sys.omega_prime(0, axis).unwrap();
        let wp = sys.omega_prime(p, axis).unwrap();
        g[axis.index()] * (wi * wp).sqrt()
    };
    assert!(((ratio(Axis::X) / ratio(Axis::Z)) + 0.5).abs() < 1e-9);
    assert!((to_hz(g[2]) + 747.7).abs() < 0.5, "{}", to_hz(g[2]));
}

#[test]
fn renormalized_frequencies_are_positive_for_stable_layout() {
    let (s, sys) = two_body();
    let w = renormalized_frequencies(&sys).unwrap();
    assert_eq!(w.len(), 2);
    assert!(w[0][2] > s.omega_ion[2]);
    assert!(w[1][2] > s.omega_particle[2]);
}

#[test]
fn unconverged_configuration_is_rejected() {
    let s = spec(1);
    let mut c = two_body_equilibrium(&s, Axis::Z).unwrap();
    c.residual_norm = 1e-20;
    assert!(matches!(build_linearized_system(&c, &s), Err(LinearError::NotConverged(_))));
}

#[test]
fn two_body_coupling_requires_single_on_axis_ion() {
    let (_, sys) = chain(2);
    assert!(matches!(two_body_couplings(&sys), Err(LinearError::OffAxisLayout)));
}

#[test]
fn chain_normal_modes_are_complete() {
    for n in [2, 3, 4, 5] {
        let (_, sys) = chain(n);
        let modes = normal_modes(&sys).unwrap();
        assert_eq!(modes.nu.len(), n);
        assert!(modes.nu.windows(2).all(|w| w[0] <= w[1]));
        let sst = &modes.s * modes.s.transpose();
        assert!((sst - DMatrix::identity(n, n)).amax() < 1e-12);
        // Each row is an eigenvector of the mass-weighted ion block.
        let block = DMatrix::from_fn(n, n, |a, b| {
            sys.potential[(coord(a, Axis::Z), coord(b, Axis::Z))] / sys.masses[0]
        });
        for (alpha, nu) in modes.nu.iter().enumerate() {
            let v = modes.s.row(alpha).transpose();
            let r = &block * &v - &v * (nu * nu);
            assert!(r.amax() < 1e-9 * nu * nu);
        }
        // Coupling rates add up to the projection of the particle coupling.
        let p = sys.particle();
        let wp = modes.omega_particle;
        let direct: f64 = (0..n)
            .map(|k| {
                let vk = sys.potential[(coord(k, Axis::Z), coord(p, Axis::Z))];
                vk * vk / (sys.masses[0] * sys.masses[p] * wp)
            })
            .sum();
        let from_modes: f64 = modes.g.iter().zip(&modes.nu).map(|(g, nu)| 4.0 * g * g * nu).sum();
        assert!(((direct - from_modes) / direct).abs() < 1e-9);
    }
}

#[test]
fn com_coupling_rule() {
    let (_, sys) = chain(3);
    let modes = normal_modes(&sys).unwrap();
    let g = &modes.g;
    assert_eq!(modes.com_coupling_squared(), g[0] * g[0] + g[1] * g[1]);
    let (_, sys) = chain(4);
    let modes = normal_modes(&sys).unwrap();
    assert_eq!(modes.com_coupling_squared(), modes.g[0] * modes.g[0]);
}

#[test]
fn reference_coupling_ordering_and_renormalization() {
    let (s, sys) = two_body();
    let g = two_body_couplings(&sys).unwrap();
    // Radial rates are below |g_z| / 2 at this charge: 168 Hz and 196 Hz
    // against 374 Hz.
    assert!(g[1] > g[0] && g[0] < 0.5 * g[2].abs(), "{g:?}");
    assert!((to_hz(g[0]) - 168.4).abs() < 0.5 && (to_hz(g[1]) - 196.1).abs() < 0.5, "{g:?}");
    let p = sys.particle();
    let d = sys.positions[0][2] - sys.positions[p][2];
    let c = nanotrap::constants::coulomb_k() * s.ion.charge * s.nanoparticle.charge / (s.nanoparticle.mass * d.powi(3));
    let wz = s.omega_particle[2].powi(2) + 2.0 * c;
    let wy = s.omega_particle[1].powi(2) - c;
    assert!(((sys.omega_sq(p, Axis::Z) - wz) / wz).abs() < 1e-12);
    assert!(((sys.omega_sq(p, Axis::Y) - wy) / wy).abs() < 1e-12);
}
