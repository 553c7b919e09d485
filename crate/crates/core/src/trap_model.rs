//! Single-particle dynamics in a two-tone Paul trap.
//!
//! Along each axis a particle obeys the two-tone Mathieu equation
//!
//! ```text
//! R'' + (a + 2 q_s l² cos(2 l τ) + 2 q_f cos(2 τ)) R = 0,   τ = ω_f t / 2,
//! ```
//!
//! with `l = ω_s/ω_f`. Note that `q_s` carries a `1/l²` factor and is
//! multiplied back by `l²` inside the equation; [`MathieuParams::q_s`] stores
//! the unscaled value, so `q_s l²` is the actual slow-tone stiffness.
//!
//! The secular frequency is `Ω = β ω_f / 2` where `β² = x` solves
//!
//! ```text
//! x = a + q_f²/2 + q_s² l⁴ / (2 (l² - x)).
//! ```

use nalgebra::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::diagnostics::{Warning, ERROR_RATIO, WARN_RATIO};
use crate::numeric::ode::{integrate_rk4, OdeSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrapError {
    #[error("particle mass must be positive (got {0:e} kg)")]
    NonPositiveMass(f64),
    #[error("particle charge must be non-zero")]
    ZeroCharge,
    #[error("invalid particle: {0}")]
    InvalidParticle(String),
    #[error("invalid trap: {0}")]
    InvalidTrap(String),
    #[error("Gauss constraint violated for the {tone} tone (relative residual {residual:e})")]
    ConstraintViolation { tone: &'static str, residual: f64 },
    #[error("no stable root of the secular equation on axis {axis}")]
    NoStableRoot { axis: Axis },
    #[error("perturbation parameter {name} = {value:e} on axis {axis} exceeds {limit}")]
    PerturbationOutOfRange {
        axis: Axis,
        name: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("nanoparticle-limit regime violated on axis {axis} (ratio {ratio:e})")]
    RegimeViolation { axis: Axis, ratio: f64 },
    #[error("negative discriminant {value:e} in the ion-branch formula on axis {axis}")]
    NegativeDiscriminant { axis: Axis, value: f64 },
    #[error("slow-sideband amplitude {amplitude:e} is too large")]
    SidebandTooLarge { amplitude: f64 },
    #[error("integration diverged: {0}")]
    IntegrationDiverged(String),
}

/// Electrode geometry and drive voltages. Index 0, 1, 2 is x, y, z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapConfiguration {
    /// Electrode distance `d_j` (m).
    pub electrode_distance: [f64; 3],
    /// Geometric factor `α_j`.
    pub geometric_factor: [f64; 3],
    /// Static voltage `U_0j` (V).
    pub u_dc: [f64; 3],
    /// Slow RF amplitude `U_sj` (V).
    pub u_slow: [f64; 3],
    /// Fast RF amplitude `U_fj` (V).
    pub u_fast: [f64; 3],
    /// Slow drive angular frequency (rad/s).
    pub omega_slow: f64,
    /// Fast drive angular frequency (rad/s).
    pub omega_fast: f64,
}

/// Relative tolerance of the Laplace (Gauss) constraint checks.
pub const GAUSS_TOL: f64 = 1e-9;

fn gauss_residual(u: &[f64; 3], alpha: &[f64; 3], d: &[f64; 3]) -> f64 {
    let terms: Vec<f64> = (0..3).map(|j| u[j] * alpha[j] / (d[j] * d[j])).collect();
    let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if scale == 0.0 {
        0.0
    } else {
        terms.iter().sum::<f64>().abs() / scale
    }
}

impl TrapConfiguration {
    fn check_geometry(&self) -> Result<(), TrapError> {
        if !(self.omega_slow > 0.0 && self.omega_fast > self.omega_slow) {
            return Err(TrapError::InvalidTrap(format!(
                "drive frequencies must satisfy omega_fast > omega_slow > 0 (got {:e}, {:e})",
                self.omega_fast, self.omega_slow
            )));
        }
        for j in 0..3 {
            if !(self.electrode_distance[j] > 0.0) {
                return Err(TrapError::InvalidTrap(format!(
                    "electrode distance on axis {} must be positive",
                    Axis::from_index(j)
                )));
            }
            let a = self.geometric_factor[j];
            if !(a > 0.0 && a <= 1.0) {
                return Err(TrapError::InvalidTrap(format!(
                    "geometric factor on axis {} must lie in (0, 1] (got {a})",
                    Axis::from_index(j)
                )));
            }
        }
        Ok(())
    }

    /// Relative Gauss residuals of the (static, slow, fast) voltage sets.
    pub fn gauss_residuals(&self) -> [f64; 3] {
        let (a, d) = (&self.geometric_factor, &self.electrode_distance);
        [
            gauss_residual(&self.u_dc, a, d),
            gauss_residual(&self.u_slow, a, d),
            gauss_residual(&self.u_fast, a, d),
        ]
    }

    /// Checks the invariants. RF constraint violations are errors; a static
    /// constraint violation is reported as a warning because endcap fields
    /// in real traps routinely break it.
    pub fn validate(&self) -> Result<Vec<Warning>, TrapError> {
        self.check_geometry()?;
        let [r0, rs, rf] = self.gauss_residuals();
        if rs > GAUSS_TOL {
            return Err(TrapError::ConstraintViolation { tone: "slow", residual: rs });
        }
        if rf > GAUSS_TOL {
            return Err(TrapError::ConstraintViolation { tone: "fast", residual: rf });
        }
        let mut warnings = Vec::new();
        if r0 > GAUSS_TOL {
            warnings.push(Warning::new(
                "dc-gauss",
                format!("static voltages violate the Gauss constraint (relative residual {r0:.3e})"),
            ));
        }
        Ok(warnings)
    }

    /// `l = ω_s/ω_f`.
    pub fn frequency_ratio(&self) -> f64 {
        self.omega_slow / self.omega_fast
    }

    /// `Qα/(M d²)` for a particle on the given axis (s⁻² V⁻¹).
    pub fn stiffness(&self, particle: &ParticleSpec, axis: Axis) -> f64 {
        let j = axis.index();
        let d = self.electrode_distance[j];
        particle.charge * self.geometric_factor[j] / (particle.mass * d * d)
    }

    /// Time-dependent stiffness `W(t)` (s⁻²).
    pub fn w(&self, particle: &ParticleSpec, axis: Axis, t: f64) -> f64 {
        let j = axis.index();
        self.stiffness(particle, axis)
            * (self.u_dc[j] + self.u_slow[j] * (self.omega_slow * t).cos() + self.u_fast[j] * (self.omega_fast * t).cos())
    }

    /// True when the axis carries no RF voltage.
    pub fn is_static_axis(&self, axis: Axis) -> bool {
        let j = axis.index();
        self.u_slow[j] == 0.0 && self.u_fast[j] == 0.0
    }
}

/// Charged point mass. Ions have zero radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    /// Mass (kg).
    pub mass: f64,
    /// Charge (C).
    pub charge: f64,
    /// Radius (m); zero for ions.
    pub radius: f64,
    /// Relative permittivity; only meaningful when `radius > 0`.
    pub permittivity: f64,
}

impl ParticleSpec {
    pub fn validate(&self) -> Result<(), TrapError> {
        if !(self.mass > 0.0) {
            return Err(TrapError::NonPositiveMass(self.mass));
        }
        if self.charge == 0.0 || !self.charge.is_finite() {
            return Err(TrapError::ZeroCharge);
        }
        if !(self.radius >= 0.0) {
            return Err(TrapError::InvalidParticle(format!("radius must be non-negative (got {:e})", self.radius)));
        }
        if self.radius > 0.0 && !(self.permittivity > 1.0) {
            return Err(TrapError::InvalidParticle(format!(
                "relative permittivity must exceed 1 for a dielectric sphere (got {})",
                self.permittivity
            )));
        }
        Ok(())
    }

    pub fn species(&self) -> Species {
        if self.radius > 0.0 {
            Species::Nanoparticle
        } else {
            Species::Ion
        }
    }

    /// Polarizability `4π ε0 R³ (ε-1)/(ε+2)` (C m² / V).
    pub fn polarizability(&self) -> f64 {
        let e = self.permittivity;
        4.0 * PI * crate::constants::EPSILON_0 * self.radius.powi(3) * (e - 1.0) / (e + 2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Nanoparticle,
    Ion,
}

/// Dimensionless Mathieu parameters of one axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MathieuParams {
    pub a: f64,
    /// Slow-tone parameter as defined with the `1/l²` factor.
    pub q_s: f64,
    pub q_f: f64,
    /// `ω_s/ω_f`.
    pub l: f64,
    pub axis: Axis,
    /// Fast drive angular frequency (rad/s), needed to restore time units.
    pub omega_f: f64,
}

impl MathieuParams {
    pub fn omega_s(&self) -> f64 {
        self.l * self.omega_f
    }

    /// `Ω_f = (ω_f/2) sqrt(a + q_f²/2)`, the single-tone secular frequency.
    pub fn single_tone_frequency(&self) -> Option<f64> {
        let x = self.a + 0.5 * self.q_f * self.q_f;
        (x > 0.0).then(|| 0.5 * self.omega_f * x.sqrt())
    }

    /// Stiffness `W(t)` in s⁻² reconstructed from the dimensionless form.
    pub fn w(&self, t: f64) -> f64 {
        let ws = self.omega_s();
        0.25 * self.omega_f * self.omega_f
            * (self.a + 2.0 * self.q_s * self.l * self.l * (ws * t).cos() + 2.0 * self.q_f * (self.omega_f * t).cos())
    }
}

pub fn compute_mathieu_params(
    trap: &TrapConfiguration,
    particle: &ParticleSpec,
    axis: Axis,
) -> Result<MathieuParams, TrapError> {
    particle.validate()?;
    trap.validate()?;
    let j = axis.index();
    let wf = trap.omega_fast;
    let l = trap.frequency_ratio();
    let pre = 2.0 * particle.charge * trap.geometric_factor[j]
        / (particle.mass * trap.electrode_distance[j].powi(2) * wf * wf);
    Ok(MathieuParams {
        a: 2.0 * pre * trap.u_dc[j],
        q_s: pre * trap.u_slow[j] / (l * l),
        q_f: pre * trap.u_fast[j],
        l,
        axis,
        omega_f: wf,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    NanoparticleLimit,
    IonBranch,
    FullQuartic,
}

/// How [`secular_spectrum`] picks the frequency formula.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecularMethod {
    /// Nanoparticle-limit formula for particles with a radius, ion-branch
    /// formula for ions.
    #[default]
    Auto,
    NanoparticleLimit,
    IonBranch,
    FullQuartic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecularEntry {
    pub axis: Axis,
    /// Secular angular frequency Ω (rad/s).
    pub omega: f64,
    /// Dimensionless frequency β = 2Ω/ω_f.
    pub beta: f64,
    pub branch: Branch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecularSpectrum {
    pub entries: [SecularEntry; 3],
    pub warnings: Vec<Warning>,
}

impl SecularSpectrum {
    pub fn omega(&self, axis: Axis) -> f64 {
        self.entries[axis.index()].omega
    }

    pub fn omegas(&self) -> [f64; 3] {
        [self.entries[0].omega, self.entries[1].omega, self.entries[2].omega]
    }
}

fn perturbation_checks(p: &MathieuParams, warnings: &mut Vec<Warning>) -> Result<(), TrapError> {
    let l2 = p.l * p.l;
    let checks = [
        ("a", p.a.abs()),
        ("q_f^2", p.q_f * p.q_f),
        ("q_s^2 l^4", p.q_s * p.q_s * l2 * l2),
    ];
    for (name, value) in checks {
        if value > ERROR_RATIO {
            return Err(TrapError::PerturbationOutOfRange {
                axis: p.axis,
                name,
                value,
                limit: ERROR_RATIO,
            });
        }
        if value > WARN_RATIO {
            warnings.push(Warning::new(
                "perturbation",
                format!("axis {}: {name} = {value:.3e} is not small", p.axis),
            ));
        }
    }
    Ok(())
}

/// Root `x = β²` of the secular equation continuous with the single-tone
/// limit. Both roots lie between `A = a + q_f²/2` and `l²`; the one nearest
/// `A` is returned.
pub fn secular_beta_squared(p: &MathieuParams) -> Option<f64> {
    let big_a = p.a + 0.5 * p.q_f * p.q_f;
    let l2 = p.l * p.l;
    let b = 0.5 * p.q_s * p.q_s * l2 * l2;
    let disc = (l2 - big_a).powi(2) - 4.0 * b;
    if !(disc >= 0.0) {
        return None;
    }
    let s = l2 + big_a;
    let x_plus = 0.5 * (s + disc.sqrt());
    let x = if big_a >= l2 {
        x_plus
    } else if x_plus > 0.0 {
        (big_a * l2 + b) / x_plus
    } else {
        0.5 * (s - disc.sqrt())
    };
    (x > 0.0 && x.is_finite()).then_some(x)
}

/// Secular frequency from the full quadratic-in-β² equation.
pub fn secular_frequency(p: &MathieuParams) -> Result<(SecularEntry, Vec<Warning>), TrapError> {
    let mut warnings = Vec::new();
    perturbation_checks(p, &mut warnings)?;
    let x = secular_beta_squared(p).ok_or(TrapError::NoStableRoot { axis: p.axis })?;
    let beta = x.sqrt();
    Ok((
        SecularEntry {
            axis: p.axis,
            omega: 0.5 * beta * p.omega_f,
            beta,
            branch: Branch::FullQuartic,
        },
        warnings,
    ))
}

/// Nanoparticle-limit frequency
/// `Ω² = QU_0α/(Md²) + ½ (Qα/(Md²))² (U_s²/ω_s² + U_f²/ω_f²)`.
pub fn nanoparticle_frequency_approx(
    trap: &TrapConfiguration,
    particle: &ParticleSpec,
    axis: Axis,
) -> Result<(f64, Vec<Warning>), TrapError> {
    let p = compute_mathieu_params(trap, particle, axis)?;
    let j = axis.index();
    let k = trap.stiffness(particle, axis);
    let omega2 = k * trap.u_dc[j]
        + 0.5 * k * k * ((trap.u_slow[j] / trap.omega_slow).powi(2) + (trap.u_fast[j] / trap.omega_fast).powi(2));
    if !(omega2 > 0.0) {
        return Err(TrapError::NoStableRoot { axis });
    }
    let l2 = p.l * p.l;
    let beta2 = 4.0 * omega2 / (trap.omega_fast * trap.omega_fast);
    let ratio = [p.a.abs(), p.q_f * p.q_f, p.q_s * p.q_s * l2 * l2, beta2]
        .into_iter()
        .fold(0.0f64, f64::max)
        / l2;
    if ratio > ERROR_RATIO {
        return Err(TrapError::RegimeViolation { axis, ratio });
    }
    let mut warnings = Vec::new();
    if ratio > WARN_RATIO {
        warnings.push(Warning::new(
            "nanoparticle-regime",
            format!("axis {axis}: nanoparticle-limit ratio {ratio:.3} exceeds {WARN_RATIO}"),
        ));
    }
    Ok((omega2.sqrt(), warnings))
}

/// Ion-branch frequency
/// `Ω² = ½ (Ω_f² + ω_s²/4 + sqrt((Ω_f² - ω_s²/4)² - Q²U_s²α²/(2M²d⁴)))`.
pub fn ion_frequency_approx(trap: &TrapConfiguration, particle: &ParticleSpec, axis: Axis) -> Result<f64, TrapError> {
    let p = compute_mathieu_params(trap, particle, axis)?;
    let j = axis.index();
    let wf = trap.omega_fast;
    let of2 = 0.25 * wf * wf * (p.a + 0.5 * p.q_f * p.q_f);
    let ws2 = 0.25 * trap.omega_slow * trap.omega_slow;
    let k = trap.stiffness(particle, axis);
    let disc = (of2 - ws2).powi(2) - 0.5 * (k * trap.u_slow[j]).powi(2);
    if disc < 0.0 {
        return Err(TrapError::NegativeDiscriminant { axis, value: disc });
    }
    let omega2 = 0.5 * (of2 + ws2 + disc.sqrt());
    if !(omega2 > 0.0) {
        return Err(TrapError::NoStableRoot { axis });
    }
    Ok(omega2.sqrt())
}

/// Secular frequencies on all three axes.
pub fn secular_spectrum(
    trap: &TrapConfiguration,
    particle: &ParticleSpec,
    method: SecularMethod,
) -> Result<SecularSpectrum, TrapError> {
    let method = match method {
        SecularMethod::Auto => match particle.species() {
            Species::Nanoparticle => SecularMethod::NanoparticleLimit,
            Species::Ion => SecularMethod::IonBranch,
        },
        m => m,
    };
    let mut warnings = trap.validate()?;
    let mut entries = Vec::with_capacity(3);
    for axis in Axis::ALL {
        let p = compute_mathieu_params(trap, particle, axis)?;
        let (omega, branch) = match method {
            SecularMethod::NanoparticleLimit => {
                let (w, mut warn) = nanoparticle_frequency_approx(trap, particle, axis)?;
                warnings.append(&mut warn);
                (w, Branch::NanoparticleLimit)
            }
            SecularMethod::IonBranch => {
                perturbation_checks(&p, &mut warnings)?;
                (ion_frequency_approx(trap, particle, axis)?, Branch::IonBranch)
            }
            _ => {
                let (e, mut warn) = secular_frequency(&p)?;
                warnings.append(&mut warn);
                (e.omega, Branch::FullQuartic)
            }
        };
        entries.push(SecularEntry {
            axis,
            omega,
            beta: 2.0 * omega / trap.omega_fast,
            branch,
        });
    }
    Ok(SecularSpectrum {
        entries: [entries[0], entries[1], entries[2]],
        warnings,
    })
}

/// Classical displacement `R(t)` with `R(0) = 1` and `Ṙ(0) ≈ iΩ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementFunction {
    /// Secular frequency Ω (rad/s).
    pub omega: f64,
    /// `q_f/2`.
    pub fast_amplitude: f64,
    /// `q_s l² / (2 (l² - β²))`.
    pub slow_amplitude: f64,
    /// `1/(1 + q_f/2 + slow_amplitude)`.
    pub normalization: f64,
    pub omega_s: f64,
    pub omega_f: f64,
}

/// Slow-sideband amplitude above which a warning is issued.
pub const SIDEBAND_WARN: f64 = 0.2;
/// Slow-sideband amplitude above which the expansion is rejected.
pub const SIDEBAND_ERROR: f64 = 0.5;

impl DisplacementFunction {
    pub fn at(&self, t: f64) -> Complex<f64> {
        let env = 1.0 + self.fast_amplitude * (self.omega_f * t).cos() + self.slow_amplitude * (self.omega_s * t).cos();
        Complex::from_polar(self.normalization * env, self.omega * t)
    }

    /// Spectral lines `(angular frequency, complex amplitude)` of `R(t)`.
    pub fn tones(&self) -> Vec<(f64, f64)> {
        let n = self.normalization;
        let (f, s) = (0.5 * self.fast_amplitude * n, 0.5 * self.slow_amplitude * n);
        vec![
            (self.omega, n),
            (self.omega + self.omega_s, s),
            (self.omega - self.omega_s, s),
            (self.omega + self.omega_f, f),
            (self.omega - self.omega_f, f),
        ]
    }
}

pub fn displacement_function(
    p: &MathieuParams,
    entry: &SecularEntry,
) -> Result<(DisplacementFunction, Vec<Warning>), TrapError> {
    let l2 = p.l * p.l;
    let beta2 = entry.beta * entry.beta;
    let slow = p.q_s * l2 / (2.0 * (l2 - beta2));
    if !slow.is_finite() || slow.abs() > SIDEBAND_ERROR {
        return Err(TrapError::SidebandTooLarge { amplitude: slow });
    }
    let mut warnings = Vec::new();
    if slow.abs() > SIDEBAND_WARN {
        warnings.push(Warning::new(
            "sideband",
            format!("axis {}: slow-sideband amplitude {slow:.3} is not small", p.axis),
        ));
    }
    let fast = 0.5 * p.q_f;
    Ok((
        DisplacementFunction {
            omega: entry.omega,
            fast_amplitude: fast,
            slow_amplitude: slow,
            normalization: 1.0 / (1.0 + fast + slow),
            omega_s: p.omega_s(),
            omega_f: p.omega_f,
        },
        warnings,
    ))
}

/// Single-axis equation of motion `R'' + W(t) R = 0` in real time.
pub struct MathieuOde {
    pub params: MathieuParams,
}

impl OdeSystem for MathieuOde {
    fn dim(&self) -> usize {
        2
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = -self.params.w(t) * y[0];
    }
}

/// Secular frequency measured from a direct integration of the equation of
/// motion: at least 50 secular periods, 200 steps per period of every tone
/// present, block-averaged to remove micromotion, Hann-windowed periodogram
/// with Gaussian peak interpolation.
pub fn classical_frequency_oracle(p: &MathieuParams) -> Result<f64, TrapError> {
    let estimate = secular_beta_squared(p)
        .map(|x| 0.5 * p.omega_f * x.sqrt())
        .or_else(|| p.single_tone_frequency())
        .ok_or(TrapError::NoStableRoot { axis: p.axis })?;
    let t_sec = 2.0 * PI / estimate;
    let t_f = 2.0 * PI / p.omega_f;
    let t_s = 2.0 * PI / p.omega_s();
    let mut h = t_sec / 200.0;
    if p.q_f != 0.0 {
        h = h.min(t_f / 200.0);
    }
    if p.q_s != 0.0 {
        h = h.min(t_s / 200.0);
    }
    // Block length: an integer number of fast periods (or steps) well below
    // the secular and slow periods.
    let finest_slow = if p.q_s != 0.0 { t_sec.min(t_s) } else { t_sec };
    let block_steps = if p.q_f != 0.0 {
        let steps_per_tf = (t_f / h).round().max(1.0);
        h = t_f / steps_per_tf;
        let k = ((finest_slow / 16.0) / t_f).floor().max(1.0);
        (k * steps_per_tf) as usize
    } else {
        ((finest_slow / 16.0) / h).floor().max(1.0) as usize
    };
    let periods = 64.0;
    let n_blocks = ((periods * t_sec) / (h * block_steps as f64)).ceil() as usize;
    let total_steps = n_blocks * block_steps;
    let horizon = h * total_steps as f64;
    let sys = MathieuOde { params: *p };
    let mut y = [1.0, 0.0];
    let mut samples = Vec::with_capacity(n_blocks);
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut diverged = false;
    integrate_rk4(&sys, 0.0, horizon, total_steps, &mut y, |step| {
        let mut out = [0.0; 2];
        step.eval(0.5 * (step.t_start() + step.t_end()), &mut out);
        acc += out[0];
        count += 1;
        if out[0].abs() > 1e8 {
            diverged = true;
        }
        if count == block_steps {
            samples.push(acc / block_steps as f64);
            acc = 0.0;
            count = 0;
        }
    })
    .map_err(|e| TrapError::IntegrationDiverged(e.to_string()))?;
    if diverged {
        return Err(TrapError::IntegrationDiverged("amplitude exceeded 1e8".into()));
    }
    let dt = h * block_steps as f64;
    let peak = spectral_peak(&samples, dt).ok_or_else(|| TrapError::IntegrationDiverged("no spectral peak".into()))?;
    Ok(peak)
}

/// Dominant angular frequency of a uniformly sampled real signal.
pub fn spectral_peak(samples: &[f64], dt: f64) -> Option<f64> {
    let n = samples.len();
    if n < 8 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let padded = (n * 8).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            Complex::new((x - mean) * w, 0.0)
        })
        .collect();
    buf.resize(padded, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let mag: Vec<f64> = buf[..padded / 2].iter().map(|c| c.norm_sqr()).collect();
    let start = 16.min(mag.len() - 2);
    let (k, _) = mag
        .iter()
        .enumerate()
        .skip(start)
        .take(mag.len() - start - 1)
        .fold((start, f64::NEG_INFINITY), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
    let (lm, l0, lp) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
    let denom = lm - 2.0 * l0 + lp;
    let delta = if denom.abs() > 0.0 { 0.5 * (lm - lp) / denom } else { 0.0 };
    Some(2.0 * PI * (k as f64 + delta) / (padded as f64 * dt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RwaCondition {
    pub name: String,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RwaReport {
    pub axis: Axis,
    pub species: Species,
    pub conditions: Vec<RwaCondition>,
    pub pass: bool,
}

/// Evaluates the conditions under which the single-mode secular Hamiltonian
/// is valid; each ratio must stay below [`WARN_RATIO`].
pub fn rwa_validity_report(p: &MathieuParams, entry: &SecularEntry, species: Species) -> RwaReport {
    let omega = entry.omega;
    let ws = p.omega_s();
    let mut conditions = vec![RwaCondition {
        name: "q_f*omega_f/(16*Omega)".into(),
        ratio: (p.q_f * p.omega_f).abs() / (16.0 * omega),
        pass: false,
    }];
    match species {
        Species::Nanoparticle => conditions.push(RwaCondition {
            name: "q_s*omega_s/(16*Omega)".into(),
            ratio: (p.q_s * ws).abs() / (16.0 * omega),
            pass: false,
        }),
        Species::Ion => {
            let r = ws / omega;
            let q = p.q_s.abs();
            conditions.push(RwaCondition {
                name: "(q_s/64)(omega_s/Omega)^3|1-(q_s/8)^2(omega_s/Omega)^2|".into(),
                ratio: q / 64.0 * r.powi(3) * (1.0 - (q / 8.0).powi(2) * r * r).abs(),
                pass: false,
            })
        }
    }
    for c in &mut conditions {
        c.pass = c.ratio < WARN_RATIO;
    }
    let pass = conditions.iter().all(|c| c.pass);
    RwaReport {
        axis: p.axis,
        species,
        conditions,
        pass,
    }
}
