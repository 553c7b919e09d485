use nanotrap::constants::coulomb_k;
use nanotrap::equilibrium::*;
use nanotrap::linear_system::potential_matrix;
use nanotrap::reference;
use nanotrap::trap_model::{Axis, SecularMethod};
use proptest::prelude::*;

fn spec(n_ions: usize) -> SystemSpec {
    let (s, _) = SystemSpec::new(
        reference::trap(),
        reference::nanoparticle(),
        reference::ion(),
        n_ions,
        SecularMethod::Auto,
    )
    .unwrap();
    s
}

fn settings(restarts: usize, axis_restricted: bool) -> SearchSettings {
    SearchSettings {
        restarts,
        axis_restricted,
        floquet_check: false,
        ..SearchSettings::default()
    }
}

fn max_dist(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| (0..3).map(move |j| (p[j] - q[j]).abs()))
        .fold(0.0, f64::max)
}

fn mirror_z(p: &[[f64; 3]]) -> Vec<[f64; 3]> {
    p.iter().map(|r| [r[0], r[1], -r[2]]).collect()
}

/// A generic off-equilibrium layout of `n` ions plus the particle.
fn scattered(n: usize) -> Vec<[f64; 3]> {
    (0..=n)
        .map(|b| {
            let t = b as f64;
            [3e-6 * (1.3 * t).sin(), 2e-6 * (0.7 * t + 0.4).cos(), 20e-6 * (t - 0.5 * n as f64)]
        })
        .collect()
}

#[test]
fn two_body_equilibrium_balances_forces() {
    let s = spec(1);
    for axis in Axis::ALL {
        let c = two_body_equilibrium(&s, axis).unwrap();
        assert!(c.residual_norm < ROOT_ACCEPT);
        assert_eq!(c.layout, Layout::OnAxis(axis));
        assert!(c.ions[0][axis.index()] > 0.0 && c.nanoparticle[axis.index()] < 0.0);
    }
}

#[test]
fn two_body_equilibrium_separation_matches_closed_form() {
    let s = spec(1);
    let j = 2;
    let kp = s.nanoparticle.mass * s.omega_particle[j].powi(2);
    let ki = s.ion.mass * s.omega_ion[j].powi(2);
    let qq = coulomb_k() * s.nanoparticle.charge * s.ion.charge;
    let d = (qq * (1.0 / kp + 1.0 / ki)).cbrt();
    let c = two_body_equilibrium(&s, Axis::Z).unwrap();
    let sep = c.ions[0][2] - c.nanoparticle[2];
    assert!(((sep - d) / d).abs() < 1e-12);
}

#[test]
fn search_recovers_two_body_equilibrium() {
    let s = spec(1);
    let outcome = find_equilibria(&s, &settings(200, true)).unwrap();
    let exact = two_body_equilibrium(&s, Axis::Z).unwrap().positions();
    let stable = outcome.stable();
    assert_eq!(stable.len(), 2);
    for c in stable {
        let p = c.positions();
        let d = max_dist(&p, &exact).min(max_dist(&p, &mirror_z(&exact)));
        assert!(d < 1e-9, "{d:e}");
    }
}

#[test]
fn single_ion_free_search_finds_only_z_layouts() {
    let s = spec(1);
    let outcome = find_equilibria(&s, &settings(600, false)).unwrap();
    let stable = outcome.stable();
    assert_eq!(stable.len(), 2);
    for c in stable {
        assert_eq!(c.layout, Layout::OnAxis(Axis::Z));
        assert_eq!(c.topology, Some(ChainTopology::OneSided));
    }
    // The x and y layouts exist but are saddles.
    for axis in [Axis::X, Axis::Y] {
        assert!(!two_body_equilibrium(&s, axis).unwrap().dynamically_stable);
    }
}

#[test]
fn search_is_deterministic() {
    let s = spec(3);
    let a = find_equilibria(&s, &settings(300, false)).unwrap();
    let b = find_equilibria(&s, &settings(300, false)).unwrap();
    assert_eq!(a.configurations, b.configurations);
    assert_eq!(a.converged, b.converged);
}

#[test]
fn chain_search_finds_converged_stable_layouts() {
    let s = spec(4);
    let outcome = find_equilibria(&s, &settings(400, true)).unwrap();
    let stable = outcome.stable();
    assert!(!stable.is_empty());
    for c in &stable {
        assert!(c.residual_norm < ROOT_ACCEPT);
        assert!(c.is_stable());
        let z: Vec<f64> = c.ions.iter().map(|r| r[2]).collect();
        assert!(z.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn force_residual_is_energy_gradient() {
    let s = spec(3);
    let p = scattered(3);
    let f = force_residual(&p, &s).unwrap();
    let h = 1e-12;
    let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..f.len() {
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus[i / 3][i % 3] += h;
        minus[i / 3][i % 3] -= h;
        let fd = (total_energy(&plus, &s).unwrap() - total_energy(&minus, &s).unwrap()) / (2.0 * h);
        assert!((fd - f[i]).abs() < 1e-6 * scale, "{i}: {fd:e} vs {:e}", f[i]);
    }
}

#[test]
fn potential_matrix_is_force_jacobian() {
    let s = spec(3);
    let p = scattered(3);
    let v = potential_matrix(&p, &s).unwrap();
    let h = 1e-11;
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for i in 0..v.nrows() {
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus[i / 3][i % 3] += h;
        minus[i / 3][i % 3] -= h;
        let fp = force_residual(&plus, &s).unwrap();
        let fm = force_residual(&minus, &s).unwrap();
        for k in 0..v.nrows() {
            let fd = (fp[k] - fm[k]) / (2.0 * h);
            assert!((fd - v[(k, i)]).abs() < 1e-6 * scale, "({k},{i})");
        }
    }
}

#[test]
fn energy_decomposition() {
    let s = spec(2);
    let p = scattered(2);
    let total = total_energy(&p, &s).unwrap();
    let parts = trap_energy(&p, &s).unwrap() + coulomb_energy(&p, &s).unwrap();
    assert!(((total - parts) / total).abs() < 1e-15);

    let pair = vec![[0.0, 0.0, 10e-6], [0.0, 0.0, -10e-6]];
    let s1 = spec(1);
    let expected = coulomb_k() * s1.ion.charge * s1.nanoparticle.charge / 20e-6;
    assert!(((coulomb_energy(&pair, &s1).unwrap() - expected) / expected).abs() < 1e-14);
}

#[test]
fn stable_equilibrium_is_a_local_energy_minimum() {
    let s = spec(1);
    let c = two_body_equilibrium(&s, Axis::Z).unwrap();
    let p0 = c.positions();
    let e0 = total_energy(&p0, &s).unwrap();
    for i in 0..6 {
        for sign in [-1.0, 1.0] {
            let mut p = p0.clone();
            p[i / 3][i % 3] += sign * 1e-8;
            assert!(total_energy(&p, &s).unwrap() > e0);
        }
    }
}

#[test]
fn coincident_bodies_are_rejected() {
    let s = spec(1);
    let p = vec![[1e-6, 0.0, 0.0], [1e-6, 0.0, 0.0]];
    assert!(matches!(
        force_residual(&p, &s),
        Err(EquilibriumError::CoincidentParticles { a: 0, b: 1 })
    ));
    assert!(coulomb_energy(&p, &s).is_err());
}

#[test]
fn invalid_systems_are_rejected() {
    let s = spec(1);
    assert!(s.with_ions(0).validate().is_err());
    let mut opposite = s.clone();
    opposite.ion.charge = -opposite.ion.charge;
    assert!(opposite.validate().is_err());
    assert!(force_residual(&[[0.0; 3]], &s).is_err());
    assert!(two_body_equilibrium(&s.with_ions(2), Axis::Z).is_err());
    let bad = SearchSettings {
        restarts: 0,
        ..SearchSettings::default()
    };
    assert!(find_equilibria(&s, &bad).is_err());
}

#[test]
fn default_restart_budget() {
    let small = SearchSettings::default_for(3);
    assert_eq!(small.restarts, 5006);
    assert!(!small.axis_restricted);
    let large = SearchSettings::default_for(9);
    assert_eq!(large.restarts, 90_000);
    assert!(large.axis_restricted);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn two_body_equilibrium_for_random_frequencies(
        fp in 500.0f64..5e3,
        fi in 2e5f64..2e6,
        charge in 100.0f64..2000.0,
    ) {
        let mut s = spec(1);
        s.omega_particle[2] = 2.0 * std::f64::consts::PI * fp;
        s.omega_ion[2] = 2.0 * std::f64::consts::PI * fi;
        s.nanoparticle.charge = charge * reference::E_ROUNDED;
        let c = two_body_equilibrium(&s, Axis::Z).unwrap();
        prop_assert!(c.residual_norm < ROOT_ACCEPT);
        let kp = s.nanoparticle.mass * s.omega_particle[2].powi(2);
        let ki = s.ion.mass * s.omega_ion[2].powi(2);
        // Trap restoring forces cancel pairwise.
        let imbalance = kp * c.nanoparticle[2] + ki * c.ions[0][2];
        prop_assert!(imbalance.abs() < 1e-9 * (ki * c.ions[0][2]).abs());
    }
}
