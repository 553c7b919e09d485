use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use nanotrap::constants::{hz, C_LIGHT, EPSILON_0, HBAR};
use nanotrap::cooling::*;
use nanotrap::equilibrium::*;
use nanotrap::linear_system::*;
use nanotrap::reference;
use nanotrap::trap_model::{Axis, SecularMethod};
use proptest::prelude::*;

type C64 = Complex<f64>;

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

fn params() -> DissipationParams {
    DissipationParams {
        gas_damping_override: Some(reference::quoted_gas_damping()),
        ..reference::dissipation()
    }
}

fn two_body(params: &DissipationParams) -> (LinearizedSystem, DissipationRates) {
    let s = spec(1);
    let c = two_body_equilibrium(&s, Axis::Z).unwrap();
    let sys = build_linearized_system(&c, &s).unwrap();
    let (rates, _) = DissipationRates::evaluate(params, &sys, &s.nanoparticle).unwrap();
    (sys, rates)
}

fn z_model() -> AxisModel {
    let (sys, rates) = two_body(&params());
    AxisModel::from_system(&sys, &rates, Axis::Z).unwrap()
}

/// Neumaier sum of exactly split products.
fn compensated_sum(terms: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &t in terms {
        let s = sum + t;
        comp += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
    }
    sum + comp
}

/// `‖A X + X Aᵀ + C‖_F / ‖C‖_F` with `X = hi + lo`, every product split
/// exactly by a fused multiply-add.
fn lyapunov_residual(a: &DMatrix<C64>, c: &DMatrix<C64>, hi: &DMatrix<C64>, lo: &DMatrix<C64>) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut re = vec![c[(i, j)].re];
            let mut im = vec![c[(i, j)].im];
            let mut push = |x: C64, y: C64| {
                for (u, v, sign, imag) in [
                    (x.re, y.re, 1.0, false),
                    (x.im, y.im, -1.0, false),
                    (x.re, y.im, 1.0, true),
                    (x.im, y.re, 1.0, true),
                ] {
                    let out = if imag { &mut im } else { &mut re };
                    let p = u * v;
                    out.push(sign * p);
                    out.push(sign * u.mul_add(v, -p));
                }
            };
            for k in 0..n {
                for x in [hi, lo] {
                    push(a[(i, k)], x[(k, j)]);
                    push(a[(j, k)], x[(i, k)]);
                }
            }
            total += compensated_sum(&re).powi(2) + compensated_sum(&im).powi(2);
        }
    }
    total.sqrt() / c.norm()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn gas_damping_formula() {
    let np = reference::nanoparticle();
    assert_eq!(gas_damping_rate(&np, 300.0, 0.0).unwrap(), 0.0);
    let g1 = gas_damping_rate(&np, 300.0, 7e-9).unwrap();
    let g2 = gas_damping_rate(&np, 300.0, 14e-9).unwrap();
    assert_eq!(g2, 2.0 * g1);
    // Independent evaluation with the nitrogen mass 28 u.
    let m_gas = 28.0 * 1.6605e-27;
    let hand = 0.619 * 6.0 * PI * 134e-9f64.powi(2) / 2e-17 * 7e-9 * (2.0 * m_gas / (PI * 1.380649e-23 * 300.0)).sqrt();
    assert!(rel(g1, hand) < 2e-3);
    assert!(matches!(
        gas_damping_rate(&np, 0.0, 7e-9),
        Err(CoolingError::NonPositiveTemperature(_))
    ));
}

#[test]
fn backaction_formula() {
    let np = reference::nanoparticle();
    let mut p = reference::dissipation();
    let r_zpf = 1e-12;
    assert_eq!(backaction_rate(&np, &p, 0.0, r_zpf), 0.0);
    p.zeta = 1.0;
    let one = backaction_rate(&np, &p, hz(1.0), r_zpf);
    p.zeta = 7.0;
    let seven = backaction_rate(&np, &p, hz(1.0), r_zpf);
    assert!(rel(seven, 7.0 * one) < 1e-15);
    let alpha = 4.0 * PI * EPSILON_0 * 134e-9f64.powi(3) * (2.11 - 1.0) / (2.11 + 2.0);
    let k0 = 2.0 * PI / 780e-9;
    let hand = 7.0 * (hz(1.0) / 1.57e-6) * alpha * alpha * k0.powi(5) * r_zpf * r_zpf
        / (15.0 * PI * PI * HBAR * EPSILON_0 * EPSILON_0 * C_LIGHT);
    assert!(rel(seven, hand) < 1e-12);
    assert!(seven > 0.0);
}

#[test]
fn uncoupled_undriven_model_is_trivial() {
    let m = AxisModel {
        coupling: 0.0,
        doppler_heating: 0.0,
        gas_heating: 0.0,
        particle_heating: 0.0,
        ..z_model()
    };
    let (a, c) = m.drift_diffusion();
    assert_eq!(c.norm(), 0.0);
    for r in 0..2 {
        for k in 2..4 {
            assert_eq!(a[(r, k)], C64::new(0.0, 0.0));
            assert_eq!(a[(k, r)], C64::new(0.0, 0.0));
        }
    }
}

#[test]
fn drift_spectrum_and_diffusion_symmetry() {
    let m = z_model();
    let (a, c) = m.drift_diffusion();
    assert_eq!(&c, &c.transpose());
    let eig = a.clone().eigenvalues().unwrap();
    let sum: f64 = eig.iter().map(|z| z.re).sum();
    assert!(rel(sum, -(m.gamma_dop + m.gamma_particle)) < 1e-9);
    // The two eigenvalues near ±Ω'_zi carry the ion damping.
    let ion: Vec<f64> = eig
        .iter()
        .filter(|z| (z.im.abs() - m.omega_ion).abs() < 0.1 * m.omega_ion)
        .map(|z| z.re)
        .collect();
    assert_eq!(ion.len(), 2);
    for re in ion {
        assert!(rel(re, -0.5 * m.gamma_dop) < 1e-3);
    }
}

#[test]
fn uncoupled_detailed_balance() {
    let m = AxisModel {
        coupling: 0.0,
        ..z_model()
    };
    let s = solve_axis(&m, Axis::Z).unwrap();
    assert!(rel(s.n_particle, m.particle_heating / m.gamma_particle) < 1e-10);
    assert!(rel(s.n_ion, m.doppler_heating / m.gamma_dop) < 1e-10);
}

#[test]
fn lyapunov_residual_is_small() {
    use nanotrap::numeric::lyapunov::solve_continuous;
    let mut models = random_axis_models(20, 3);
    models.push(z_model());
    for model in models {
        let (a, c) = model.drift_diffusion();
        let sol = solve_continuous(&a, &c).unwrap();
        let r = lyapunov_residual(&a, &c, &sol.sigma, &sol.sigma_lo);
        assert!(r < 1e-10, "{r:e}");
        assert!(solve_steady_state(&a, &c).unwrap().residual < 1e-10);
    }
}

#[test]
fn unstable_drift_is_rejected() {
    let m = AxisModel {
        gamma_dop: -hz(1e3),
        ..z_model()
    };
    let (a, c) = m.drift_diffusion();
    assert!(solve_steady_state(&a, &c).is_err());
}

#[test]
fn reference_steady_state_temperatures() {
    let (sys, rates) = two_body(&params());
    let with = steady_state(&sys, &rates).unwrap();
    let t = with.axis(Axis::Z).unwrap().temperature_particle;
    assert!(rel(t, 23.0) < 0.15, "{t}");
    let quiet = DissipationParams {
        trap_heating_power: 0.0,
        ..params()
    };
    let (sys, rates) = two_body(&quiet);
    let without = steady_state(&sys, &rates).unwrap();
    let t = without.axis(Axis::Z).unwrap().temperature_particle;
    assert!(rel(t, 0.92) < 0.15, "{t}");
    for axis in &with.axes {
        assert!(axis.n_particle >= 0.0 && axis.n_ion >= 0.0);
    }
}

#[test]
fn occupation_is_non_increasing_in_doppler_damping() {
    let m = z_model();
    let mut last = f64::INFINITY;
    for k in 0..20 {
        let gamma_dop = hz(100.0) * 10f64.powf(3.0 * k as f64 / 19.0);
        let n = solve_axis(&AxisModel { gamma_dop, ..m }, Axis::Z).unwrap().n_particle;
        assert!(n <= last * (1.0 + 1e-12), "step {k}");
        last = n;
    }
}

#[test]
fn plateau_estimate_matches_lyapunov() {
    let m = z_model();
    let exact = solve_axis(&m, Axis::Z).unwrap().n_particle;
    let (approx, _) = occupation_approx(&m).unwrap();
    assert!(rel(approx, exact) < 0.1, "{approx:e} vs {exact:e}");
    let doubled = AxisModel {
        particle_heating: 2.0 * m.particle_heating,
        ..m
    };
    assert!(rel(occupation_approx(&doubled).unwrap().0, 2.0 * approx) < 1e-15);
    let (rate, _) = sympathetic_rate(&m).unwrap();
    let r2 = (m.omega_particle / m.omega_ion).powi(2);
    assert!(rel(m.particle_heating / rate * (1.0 - r2).powi(2), approx) < 1e-12);
}

#[test]
fn chain_solver_reduces_to_two_body() {
    let (sys, rates) = two_body(&params());
    let chain = solve_steady_state_n(&sys, &rates).unwrap();
    let axis = solve_axis(&AxisModel::from_system(&sys, &rates, Axis::Z).unwrap(), Axis::Z).unwrap();
    assert!(rel(chain.n_particle, axis.n_particle) < 1e-12);
    assert!(rel(chain.n_ions[0], axis.n_ion) < 1e-12);
}

#[test]
fn chain_occupation_decreases_with_ion_number() {
    let quiet = DissipationParams {
        trap_heating_power: 0.0,
        ..params()
    };
    let mut last = f64::INFINITY;
    for n in 1..=4 {
        let s = spec(n);
        let settings = SearchSettings {
            restarts: 100 * n,
            axis_restricted: true,
            floquet_check: false,
            ..SearchSettings::default()
        };
        let outcome = find_equilibria(&s, &settings).unwrap();
        let c = outcome.stable()[0];
        let sys = build_linearized_system(c, &s).unwrap();
        let (rates, _) = DissipationRates::evaluate(&quiet, &sys, &s.nanoparticle).unwrap();
        let r = solve_steady_state_n(&sys, &rates).unwrap();
        assert!(r.residual < 1e-10);
        assert!(r.n_particle < last);
        assert!(r.n_ions.iter().all(|&x| x >= 0.0));
        last = r.n_particle;
    }
}

#[test]
fn closed_form_report_uses_lyapunov_oracle() {
    let models = random_axis_models(50, 11);
    let report = closed_form_discrepancy(&models, 1e-6).unwrap();
    assert_eq!(report.samples.len(), 50);
    assert_eq!(report.consistent, report.max_relative_error <= 1e-6);
    for s in &report.samples {
        let exact = solve_axis(&s.model, Axis::Z).unwrap().n_particle;
        assert!(rel(s.numeric, exact) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn occupations_are_physical(seed in 0u64..1_000_000) {
        let model = random_axis_models(1, seed)[0];
        let s = solve_axis(&model, Axis::Z).unwrap();
        prop_assert!(s.n_particle >= 0.0);
        prop_assert!(s.n_ion >= 0.0);
        prop_assert!(s.residual < 1e-10);
        // Uncertainty bound on the particle block: <n>(<n>+1) >= |<b b>|².
        let anomalous = s.sigma[(2, 2)].norm();
        prop_assert!(anomalous * anomalous <= s.n_particle * (s.n_particle + 1.0) * (1.0 + 1e-9));
    }

    #[test]
    fn gas_damping_is_linear_in_pressure(p in 1e-10f64..1e-3, k in 0.1f64..10.0) {
        let np = reference::nanoparticle();
        let a = gas_damping_rate(&np, 300.0, p).unwrap();
        let b = gas_damping_rate(&np, 300.0, k * p).unwrap();
        prop_assert!(rel(b, k * a) < 1e-14);
    }
}
