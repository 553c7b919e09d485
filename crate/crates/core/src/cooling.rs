//! Dissipation rates and steady-state occupations of the secular dynamics.
//!
//! Each axis of a two-body on-axis layout is an independent pair of coupled
//! oscillators. In the ladder basis `(b_i, b_i†, b_p, b_p†)` the second
//! moments obey `σ̇ = A σ + σ Aᵀ + C`; the steady state solves the
//! continuous Lyapunov equation. The nanoparticle occupation is read off as
//! `σ₃₄`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::constants::{C_LIGHT, EPSILON_0, HBAR, K_B, NITROGEN_MASS};
use crate::diagnostics::{Warning, ERROR_RATIO, WARN_RATIO};
use crate::linear_system::{coord, LinearError, LinearizedSystem, NormalModes};
use crate::numeric::lyapunov::{solve_continuous, LyapunovError, C64};
use crate::trap_model::{Axis, ParticleSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoolingError {
    #[error("temperature must be positive (got {0} K)")]
    NonPositiveTemperature(f64),
    #[error("invalid dissipation parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} regime violated (ratio {ratio:e})")]
    RegimeViolation { what: &'static str, ratio: f64 },
    #[error("degenerate denominator in the closed-form occupation")]
    DivisionByZero,
    #[error("per-axis model needs a single ion on a trap axis")]
    NotTwoBody,
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error(transparent)]
    Linear(#[from] LinearError),
}

/// Environment, laser cooling and feedback parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationParams {
    /// Gas temperature (K).
    pub temperature: f64,
    /// Gas pressure (Pa).
    pub pressure: f64,
    /// Replaces the kinetic gas damping formula when set (rad/s).
    pub gas_damping_override: Option<f64>,
    /// Feedback damping `γ_fb` (rad/s).
    pub feedback_damping: f64,
    /// Doppler damping `γ_dop` (rad/s).
    pub doppler_damping: f64,
    /// Doppler heating power `Ė_dop` (J/s).
    pub doppler_heating_power: f64,
    /// Trap-displacement heating power `Ė_td` (J/s).
    pub trap_heating_power: f64,
    /// Probe wavelength (m).
    pub probe_wavelength: f64,
    /// Feedback constant `c_fb` (Hz m²/W).
    pub feedback_constant: f64,
    /// Detection geometry factor ζ.
    pub zeta: f64,
}

impl DissipationParams {
    pub fn validate(&self) -> Result<(), CoolingError> {
        if !(self.temperature > 0.0) {
            return Err(CoolingError::NonPositiveTemperature(self.temperature));
        }
        let non_negative = [
            ("pressure", self.pressure),
            ("feedback_damping", self.feedback_damping),
            ("doppler_damping", self.doppler_damping),
            ("doppler_heating_power", self.doppler_heating_power),
            ("trap_heating_power", self.trap_heating_power),
            ("zeta", self.zeta),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoolingError::InvalidParameter(format!("{name} must be non-negative (got {v})")));
            }
        }
        if let Some(g) = self.gas_damping_override {
            if !(g >= 0.0) {
                return Err(CoolingError::InvalidParameter(format!("gas damping must be non-negative (got {g})")));
            }
        }
        if !(self.probe_wavelength > 0.0) || !(self.feedback_constant > 0.0) {
            return Err(CoolingError::InvalidParameter(
                "probe wavelength and feedback constant must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Kinetic gas damping `0.619 (6π R²/M) P sqrt(2 m_o/(π k_B T))` (rad/s).
pub fn gas_damping_rate(particle: &ParticleSpec, temperature: f64, pressure: f64) -> Result<f64, CoolingError> {
    if !(temperature > 0.0) {
        return Err(CoolingError::NonPositiveTemperature(temperature));
    }
    if !(pressure >= 0.0) {
        return Err(CoolingError::InvalidParameter(format!("pressure must be non-negative (got {pressure})")));
    }
    let r2 = particle.radius * particle.radius;
    Ok(0.619 * 6.0 * PI * r2 / particle.mass * pressure * (2.0 * NITROGEN_MASS / (PI * K_B * temperature)).sqrt())
}

/// Measurement backaction heating for feedback damping `gamma_fb` and
/// zero-point length `r_zpf` (rad/s).
pub fn backaction_rate(particle: &ParticleSpec, params: &DissipationParams, gamma_fb: f64, r_zpf: f64) -> f64 {
    let alpha = particle.polarizability();
    let k0 = 2.0 * PI / params.probe_wavelength;
    params.zeta * (gamma_fb / params.feedback_constant) * alpha * alpha * k0.powi(5) * r_zpf * r_zpf
        / (15.0 * PI * PI * HBAR * EPSILON_0 * EPSILON_0 * C_LIGHT)
}

/// All rates entering the master equation, resolved per axis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DissipationRates {
    pub gamma_gas: f64,
    pub gamma_fb: f64,
    pub gamma_dop: f64,
    /// `Γ_gas_j = γ_gas k_B T/(ħ Ω'_jp)`.
    pub gas_heating: [f64; 3],
    /// `Γ_ba_j`.
    pub backaction: [f64; 3],
    /// `Γ_td_j = Ė_td/(ħ Ω'_jp)`.
    pub trap_heating: [f64; 3],
    /// `Γ_dop_j = Ė_dop/(ħ Ω'_ji)` for every ion.
    pub doppler_heating: Vec<[f64; 3]>,
    pub temperature: f64,
    pub pressure: f64,
    /// Gas-bath RWA validity `γ_gas k_B T < 0.1 · 2ħΩ'_jp` per axis.
    pub rwa_valid: [bool; 3],
}

impl DissipationRates {
    pub fn evaluate(
        params: &DissipationParams,
        system: &LinearizedSystem,
        particle: &ParticleSpec,
    ) -> Result<(Self, Vec<Warning>), CoolingError> {
        params.validate()?;
        let gamma_gas = match params.gas_damping_override {
            Some(g) => g,
            None => gas_damping_rate(particle, params.temperature, params.pressure)?,
        };
        let p = system.particle();
        let mut gas_heating = [0.0; 3];
        let mut backaction = [0.0; 3];
        let mut trap_heating = [0.0; 3];
        let mut rwa_valid = [true; 3];
        let mut warnings = Vec::new();
        for axis in Axis::ALL {
            let j = axis.index();
            let w = system.omega_prime(p, axis)?;
            gas_heating[j] = gamma_gas * K_B * params.temperature / (HBAR * w);
            trap_heating[j] = params.trap_heating_power / (HBAR * w);
            backaction[j] = backaction_rate(particle, params, params.feedback_damping, system.r_zpf(p, axis)?);
            let ratio = gamma_gas * K_B * params.temperature / (2.0 * HBAR * w);
            rwa_valid[j] = ratio < WARN_RATIO;
            if !rwa_valid[j] {
                warnings.push(Warning::new(
                    "gas-rwa",
                    format!("axis {axis}: gas bath ratio {ratio:.3e} is not small"),
                ));
            }
        }
        let doppler_heating = (0..system.n_ions)
            .map(|k| {
                let mut d = [0.0; 3];
                for axis in Axis::ALL {
                    d[axis.index()] = params.doppler_heating_power / (HBAR * system.omega_prime(k, axis)?);
                }
                Ok(d)
            })
            .collect::<Result<Vec<_>, CoolingError>>()?;
        Ok((
            DissipationRates {
                gamma_gas,
                gamma_fb: params.feedback_damping,
                gamma_dop: params.doppler_damping,
                gas_heating,
                backaction,
                trap_heating,
                doppler_heating,
                temperature: params.temperature,
                pressure: params.pressure,
                rwa_valid,
            },
            warnings,
        ))
    }

    /// `γ_p = γ_fb + γ_gas`.
    pub fn gamma_particle(&self) -> f64 {
        self.gamma_fb + self.gamma_gas
    }

    /// `Γ_jp = Γ_gas_j + Γ_td_j + Γ_ba_j`.
    pub fn particle_heating(&self, axis: Axis) -> f64 {
        let j = axis.index();
        self.gas_heating[j] + self.trap_heating[j] + self.backaction[j]
    }
}

/// Scalar parameters of one ion-nanoparticle axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisModel {
    /// `Ω'_ji` (rad/s).
    pub omega_ion: f64,
    /// `Ω'_jp` (rad/s).
    pub omega_particle: f64,
    /// `g_j` (rad/s).
    pub coupling: f64,
    /// `γ_dop` (rad/s).
    pub gamma_dop: f64,
    /// `γ_p = γ_fb + γ_gas` (rad/s).
    pub gamma_particle: f64,
    /// `Γ_dop_j` (rad/s).
    pub doppler_heating: f64,
    /// `Γ_gas_j` (rad/s).
    pub gas_heating: f64,
    /// `Γ_jp` (rad/s).
    pub particle_heating: f64,
}

impl AxisModel {
    pub fn from_system(system: &LinearizedSystem, rates: &DissipationRates, axis: Axis) -> Result<Self, CoolingError> {
        if system.n_ions != 1 || system.on_axis().is_none() {
            return Err(CoolingError::NotTwoBody);
        }
        let p = system.particle();
        Ok(AxisModel {
            omega_ion: system.omega_prime(0, axis)?,
            omega_particle: system.omega_prime(p, axis)?,
            coupling: system.coupling((0, axis), (p, axis))?,
            gamma_dop: rates.gamma_dop,
            gamma_particle: rates.gamma_particle(),
            doppler_heating: rates.doppler_heating[0][axis.index()],
            gas_heating: rates.gas_heating[axis.index()],
            particle_heating: rates.particle_heating(axis),
        })
    }

    /// Drift and diffusion matrices in the ladder basis.
    pub fn drift_diffusion(&self) -> (DMatrix<C64>, DMatrix<C64>) {
        let i = C64::new(0.0, 1.0);
        let z = C64::new(0.0, 0.0);
        let re = |x: f64| C64::new(x, 0.0);
        let (wi, wp, g) = (self.omega_ion, self.omega_particle, self.coupling);
        let mut a = DMatrix::from_element(4, 4, z);
        a[(0, 0)] = -i * wi - re(0.5 * self.gamma_dop);
        a[(1, 1)] = i * wi - re(0.5 * self.gamma_dop);
        a[(2, 2)] = -i * wp - re(0.5 * self.gamma_particle);
        a[(3, 3)] = i * wp - re(0.5 * self.gamma_particle);
        let zj = [[1.0, 1.0], [-1.0, -1.0]];
        for r in 0..2 {
            for c in 0..2 {
                a[(r, 2 + c)] = -i * g * zj[r][c];
                a[(2 + r, c)] = -i * g * zj[r][c];
            }
        }
        let (gd, gg, gjp) = (self.doppler_heating, self.gas_heating, self.particle_heating);
        let ig = i * g;
        let c = DMatrix::from_row_slice(
            4,
            4,
            &[
                z, re(gd), -ig, z,
                re(gd), z, z, ig,
                -ig, z, re(gg - gjp), re(gjp),
                z, ig, re(gjp), re(gg - gjp),
            ],
        );
        (a, c)
    }
}

pub fn build_drift_diffusion(
    system: &LinearizedSystem,
    rates: &DissipationRates,
    axis: Axis,
) -> Result<(DMatrix<C64>, DMatrix<C64>), CoolingError> {
    Ok(AxisModel::from_system(system, rates, axis)?.drift_diffusion())
}

/// Steady state of a ladder-basis Lyapunov problem.
#[derive(Clone, Debug)]
pub struct LadderSteadyState {
    pub sigma: DMatrix<C64>,
    /// Nanoparticle occupation, `Re σ` at the `(b_p, b_p†)` entry.
    pub n_particle: f64,
    /// Occupation of the first ion mode.
    pub n_ion: f64,
    /// Relative Lyapunov residual.
    pub residual: f64,
}

/// Solves `A σ + σ Aᵀ + C = 0`; the nanoparticle occupies the last two
/// basis slots.
pub fn solve_steady_state(a: &DMatrix<C64>, c: &DMatrix<C64>) -> Result<LadderSteadyState, CoolingError> {
    let sol = solve_continuous(a, c)?;
    let n = a.nrows();
    let sigma = &sol.sigma + &sol.sigma_lo;
    Ok(LadderSteadyState {
        n_particle: sigma[(n - 2, n - 1)].re,
        n_ion: sigma[(0, 1)].re,
        sigma,
        residual: sol.residual,
    })
}

/// `ħ Ω (n + ½) / k_B` (K).
pub fn effective_temperature(omega: f64, n: f64) -> f64 {
    HBAR * omega * (n + 0.5) / K_B
}

#[derive(Clone, Debug)]
pub struct AxisSteadyState {
    pub axis: Axis,
    pub sigma: DMatrix<C64>,
    pub n_particle: f64,
    pub n_ion: f64,
    pub temperature_particle: f64,
    pub temperature_ion: f64,
    pub residual: f64,
    pub model: AxisModel,
}

#[derive(Clone, Debug)]
pub struct SteadyStateResult {
    pub axes: Vec<AxisSteadyState>,
}

impl SteadyStateResult {
    pub fn axis(&self, axis: Axis) -> Option<&AxisSteadyState> {
        self.axes.iter().find(|a| a.axis == axis)
    }
}

pub fn solve_axis(model: &AxisModel, axis: Axis) -> Result<AxisSteadyState, CoolingError> {
    let (a, c) = model.drift_diffusion();
    let s = solve_steady_state(&a, &c)?;
    Ok(AxisSteadyState {
        axis,
        temperature_particle: effective_temperature(model.omega_particle, s.n_particle),
        temperature_ion: effective_temperature(model.omega_ion, s.n_ion),
        n_particle: s.n_particle,
        n_ion: s.n_ion,
        residual: s.residual,
        sigma: s.sigma,
        model: *model,
    })
}

/// Per-axis steady states of a two-body on-axis system.
pub fn steady_state(system: &LinearizedSystem, rates: &DissipationRates) -> Result<SteadyStateResult, CoolingError> {
    let axes = Axis::ALL
        .into_iter()
        .map(|axis| solve_axis(&AxisModel::from_system(system, rates, axis)?, axis))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SteadyStateResult { axes })
}

fn regime(what: &'static str, ratio: f64, warnings: &mut Vec<Warning>) -> Result<(), CoolingError> {
    if ratio > ERROR_RATIO {
        return Err(CoolingError::RegimeViolation { what, ratio });
    }
    if ratio > WARN_RATIO {
        warnings.push(Warning::new("cooling-regime", format!("{what} ratio {ratio:.3e} is not small")));
    }
    Ok(())
}

/// Plateau estimate `Γ_jp (Ω_i² - Ω_p²)² / (4 γ_dop g² Ω_i Ω_p)`.
pub fn occupation_approx(model: &AxisModel) -> Result<(f64, Vec<Warning>), CoolingError> {
    let mut warnings = Vec::new();
    regime("coupling |g|/Ω_i", model.coupling.abs() / model.omega_ion, &mut warnings)?;
    regime("Doppler γ_dop/Ω_i", model.gamma_dop / model.omega_ion, &mut warnings)?;
    let (wi, wp) = (model.omega_ion, model.omega_particle);
    let n = model.particle_heating * (wi * wi - wp * wp).powi(2)
        / (4.0 * model.gamma_dop * model.coupling * model.coupling * wi * wp);
    Ok((n, warnings))
}

/// Two-body sympathetic cooling rate `γ_dop 4 Ω_p g² / Ω_i³`.
pub fn sympathetic_rate(model: &AxisModel) -> Result<(f64, Vec<Warning>), CoolingError> {
    let mut warnings = Vec::new();
    regime("frequency Ω_p/Ω_i", model.omega_particle / model.omega_ion, &mut warnings)?;
    let wi = model.omega_ion;
    Ok((
        model.gamma_dop * 4.0 * model.omega_particle * model.coupling * model.coupling / (wi * wi * wi),
        warnings,
    ))
}

/// Multi-ion sympathetic cooling rate from the lowest ion modes.
/// `omega_ion` is the renormalized single-ion z frequency used in the
/// validity check.
pub fn sympathetic_rate_modes(
    modes: &NormalModes,
    gamma_dop: f64,
    omega_ion: f64,
) -> Result<(f64, Vec<Warning>), CoolingError> {
    let mut warnings = Vec::new();
    let nu1 = modes.nu[0];
    let ratio = (nu1 - omega_ion).abs() / (nu1 * omega_ion).sqrt();
    regime("mode detuning |ν₁-Ω_zi|/sqrt(ν₁Ω_zi)", ratio, &mut warnings)?;
    Ok((
        gamma_dop * 4.0 * modes.omega_particle / nu1.powi(3) * modes.com_coupling_squared(),
        warnings,
    ))
}

/// Rational closed-form occupation in units of `Ω_i`.
///
/// Experimental: this transcription does not reproduce the Lyapunov
/// solution; see [`closed_form_discrepancy`].
pub fn closed_form_occupation(model: &AxisModel) -> Result<f64, CoolingError> {
    let s = 1.0 / model.omega_ion;
    let big_g = model.gamma_dop * s;
    let g = model.coupling * s;
    let op = model.omega_particle * s;
    let gjp = model.particle_heating * s;
    let gd = model.doppler_heating * s;
    let gp = model.gamma_particle * s;

    let at = big_g + 2.0 * gd;
    let k = (big_g / 2.0).powi(2) + 1.0;
    let gplus = gp + big_g;
    let gx = gp * big_g;
    let h = |eta: f64| gx + eta * gplus * gplus;
    let chi = gx * gx + 4.0 * big_g * big_g * op * op;
    let g2 = big_g * big_g;
    let g3 = g2 * big_g;
    let g4 = g2 * g2;

    let n1 = (gx * gplus * h(3.0) + g3 * (4.0 + gplus * g2)) * (gx + 2.0 * big_g * gjp)
        - at * (gx * gx * h(2.0) + 8.0 * k * g2 * h(0.5)) * op
        + 4.0 * big_g * (h(2.0).powi(2) - 6.0 * big_g * gjp * h(4.0 / 3.0)) * op * op
        - 4.0 * at * g2 * h(2.0) * op.powi(3);
    let n2 = (gplus * gplus + 4.0 * (1.0 + op * op)).powi(2) - 64.0 * op * op;
    let n3 = k * gx * gx * gplus * (4.0 + gplus * gplus) * at - 8.0 * k * gx * gx * gplus * big_g * op
        - 4.0
            * (-4.0 * gx * gplus * h(-2.0) + gx * gx * gplus * h(2.0) + 3.0 * gplus * g4 * h(1.0 / 3.0)
                + 16.0 * g3
                + 8.0 * gplus * g4)
            * gjp
            * op
        + 8.0 * k * gplus * at * (2.0 * k * g2 + gx * h(1.0)) * op * op
        - 8.0 * big_g * (4.0 * k * gplus * g2 + 2.0 * (-4.0 * h(3.0) + 2.0 * gx * h(1.5) + g4) * gjp) * op.powi(3)
        + 16.0 * k * gplus * at * g2 * op.powi(4)
        - 64.0 * g3 * gjp * op.powi(5);
    let num = 32.0 * g.powi(4) * n1 - k * chi * big_g * gjp * n2 + 4.0 * g * g * big_g * n3;
    let den = big_g * (4.0 * k * chi - 64.0 * g2 * g * g * op) * (64.0 * gplus * gplus * g * g * op + gx * n2);
    if !(den.abs() > 1e-300) || !den.is_finite() {
        return Err(CoolingError::DivisionByZero);
    }
    Ok(num / den)
}

/// One comparison between the closed form and the Lyapunov solution.
#[derive(Clone, Debug, Serialize)]
pub struct ClosedFormSample {
    pub model: AxisModel,
    pub closed_form: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClosedFormReport {
    pub samples: Vec<ClosedFormSample>,
    pub max_relative_error: f64,
    pub median_relative_error: f64,
    /// True when every sample agrees to the requested tolerance.
    pub consistent: bool,
    pub tolerance: f64,
}

/// Random stable per-axis models in units of `Ω_i = 1`.
pub fn random_axis_models(count: usize, seed: u64) -> Vec<AxisModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let particle_heating = rng.random_range(0.0..1.0);
        let m = AxisModel {
            omega_ion: 1.0,
            omega_particle: rng.random_range(0.05..0.9),
            coupling: rng.random_range(-0.05..0.05),
            gamma_dop: rng.random_range(0.01..0.2),
            gamma_particle: rng.random_range(0.001..0.1),
            doppler_heating: rng.random_range(0.0..1.0),
            gas_heating: rng.random_range(0.0..particle_heating),
            particle_heating,
        };
        let (a, c) = m.drift_diffusion();
        if solve_continuous(&a, &c).is_ok() {
            out.push(m);
        }
    }
    out
}

/// Compares [`closed_form_occupation`] with the Lyapunov solve on `models`.
pub fn closed_form_discrepancy(models: &[AxisModel], tolerance: f64) -> Result<ClosedFormReport, CoolingError> {
    let mut samples = Vec::with_capacity(models.len());
    for m in models {
        let numeric = solve_axis(m, Axis::Z)?.n_particle;
        let closed_form = closed_form_occupation(m)?;
        let relative_error = ((closed_form - numeric) / numeric).abs();
        samples.push(ClosedFormSample {
            model: *m,
            closed_form,
            numeric,
            relative_error,
        });
    }
    let mut errs: Vec<f64> = samples.iter().map(|s| s.relative_error).collect();
    errs.sort_by(|a, b| a.total_cmp(b));
    let max_relative_error = errs.last().copied().unwrap_or(0.0);
    let median_relative_error = if errs.is_empty() { 0.0 } else { errs[errs.len() / 2] };
    Ok(ClosedFormReport {
        consistent: max_relative_error <= tolerance,
        samples,
        max_relative_error,
        median_relative_error,
        tolerance,
    })
}

/// Ladder drift and diffusion along z for `N` ions and the nanoparticle.
/// Basis `(b_1, b_1†, …, b_N, b_N†, b_p, b_p†)`.
pub fn build_drift_diffusion_n(
    system: &LinearizedSystem,
    rates: &DissipationRates,
) -> Result<(DMatrix<C64>, DMatrix<C64>), CoolingError> {
    let axis = Axis::Z;
    let nb = system.n_bodies();
    let p = system.particle();
    let dim = 2 * nb;
    let i = C64::new(0.0, 1.0);
    let re = |x: f64| C64::new(x, 0.0);
    let mut a = DMatrix::from_element(dim, dim, re(0.0));
    let mut c = DMatrix::from_element(dim, dim, re(0.0));
    let mut r = Vec::with_capacity(nb);
    for b in 0..nb {
        let w = system.omega_prime(b, axis)?;
        let gamma = if b == p { rates.gamma_particle() } else { rates.gamma_dop };
        a[(2 * b, 2 * b)] = -i * w - re(0.5 * gamma);
        a[(2 * b + 1, 2 * b + 1)] = i * w - re(0.5 * gamma);
        r.push(system.r_zpf(b, axis)?);
        if b == p {
            let gjp = rates.particle_heating(axis);
            let gg = rates.gas_heating[axis.index()];
            c[(2 * b, 2 * b)] = re(gg - gjp);
            c[(2 * b + 1, 2 * b + 1)] = re(gg - gjp);
            c[(2 * b, 2 * b + 1)] = re(gjp);
            c[(2 * b + 1, 2 * b)] = re(gjp);
        } else {
            let gd = rates.doppler_heating[b][axis.index()];
            c[(2 * b, 2 * b + 1)] = re(gd);
            c[(2 * b + 1, 2 * b)] = re(gd);
        }
    }
    for k in 0..nb {
        for l in 0..nb {
            if k == l {
                continue;
            }
            let g = system.potential[(coord(k, axis), coord(l, axis))] * r[k] * r[l] / HBAR;
            a[(2 * k, 2 * l)] = -i * g;
            a[(2 * k, 2 * l + 1)] = -i * g;
            a[(2 * k + 1, 2 * l)] = i * g;
            a[(2 * k + 1, 2 * l + 1)] = i * g;
            c[(2 * k, 2 * l)] = -i * g;
            c[(2 * k + 1, 2 * l + 1)] = i * g;
        }
    }
    Ok((a, c))
}

#[derive(Clone, Debug)]
pub struct ChainSteadyState {
    pub sigma: DMatrix<C64>,
    pub n_particle: f64,
    pub temperature_particle: f64,
    /// Occupation of every ion along z.
    pub n_ions: Vec<f64>,
    pub residual: f64,
}

/// Steady state along z for `N` ions and the nanoparticle.
pub fn solve_steady_state_n(system: &LinearizedSystem, rates: &DissipationRates) -> Result<ChainSteadyState, CoolingError> {
    let (a, c) = build_drift_diffusion_n(system, rates)?;
    let s = solve_steady_state(&a, &c)?;
    let p = system.particle();
    Ok(ChainSteadyState {
        n_ions: (0..system.n_ions).map(|k| s.sigma[(2 * k, 2 * k + 1)].re).collect(),
        temperature_particle: effective_temperature(system.omega_prime(p, Axis::Z)?, s.n_particle),
        n_particle: s.n_particle,
        residual: s.residual,
        sigma: s.sigma,
    })
}
