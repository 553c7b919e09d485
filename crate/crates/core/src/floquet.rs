//! Micromotion-resolved dynamics of the linearized system.
//!
//! The secular trap stiffness `M Ω²` of every coordinate is replaced by the
//! full two-tone stiffness `M W(t)` while the Coulomb part of `V̄` is kept
//! at the static equilibrium. Dynamics are written in scaled quadratures
//! `q = δR/R_zpf`, `p = P/P_zpf` with `[q, p] = 2i`:
//!
//! ```text
//! q̇_k = -γ_k/2 q_k + Ω'_k p_k
//! ṗ_k = -γ_k/2 p_k - Σ_l V_kl(t) R_l q_l / P_k - F_k(t) / P_k
//! ```
//!
//! With `ω_f/ω_s` an integer the system is periodic with `T_s = 2π/ω_s`.
//! The periodic covariance is found from the monodromy `Φ = X(T_s)` and the
//! covariance `Q` accumulated from zero over one period, as the fixed point
//! `Σ₀ = Φ Σ₀ Φᵀ + Q`.

use nalgebra::{Complex, DMatrix, DVector};
use std::cell::RefCell;
use std::f64::consts::PI;
use thiserror::Error;

use crate::constants::HBAR;
use crate::cooling::DissipationRates;
use crate::diagnostics::Warning;
use crate::equilibrium::SystemSpec;
use crate::linear_system::{coupling_blocks, LinearError, LinearizedSystem};
use crate::numeric::lyapunov::{solve_continuous_real, LyapunovError};
use crate::numeric::ode::{integrate_rk4, Dopri5, OdeError, OdeSystem, StepInterpolant};
use crate::trap_model::{Axis, ParticleSpec, TrapConfiguration};

/// Multipliers up to this modulus count as stable.
pub const MULTIPLIER_TOL: f64 = 1e-6;
/// Minimum number of integration steps per fast period.
pub const MIN_STEPS_PER_FAST_PERIOD: f64 = 200.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FloquetError {
    #[error("integration failed: {0}")]
    IntegratorFailure(#[from] OdeError),
    #[error("resolution of {0} steps per fast period is below the minimum of 200")]
    ResolutionTooCoarse(f64),
    #[error("1 - X(T_s) is not invertible (marginal stability)")]
    SingularResolvent,
    #[error("Floquet-unstable: largest multiplier modulus {0}")]
    Unstable(f64),
    #[error("covariance determinant {0} is below the uncertainty bound")]
    NonPhysicalCovariance(f64),
    #[error("coordinate {0} is not a nanoparticle coordinate of this system")]
    NotParticleCoordinate(usize),
    #[error("eigenvalue computation failed")]
    EigenFailure,
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error(transparent)]
    Linear(#[from] LinearError),
}

/// One coordinate of the time-dependent system.
#[derive(Clone, Debug, PartialEq)]
pub struct FloquetCoord {
    pub body: usize,
    pub axis: Axis,
    pub is_particle: bool,
    pub mass: f64,
    /// Renormalized secular frequency Ω' used for the scaling (rad/s).
    pub omega_prime: f64,
    pub r_zpf: f64,
    pub p_zpf: f64,
    /// Secular trap frequency squared (s⁻²).
    pub secular_sq: f64,
    /// `Qα/(M d²)` (s⁻² V⁻¹).
    pub stiffness: f64,
    pub u_dc: f64,
    pub u_slow: f64,
    pub u_fast: f64,
    /// Static equilibrium coordinate (m).
    pub displacement: f64,
}

impl FloquetCoord {
    fn is_static(&self) -> bool {
        self.u_slow == 0.0 && self.u_fast == 0.0
    }
}

#[derive(Clone, Debug)]
pub struct TimeDependentSystem {
    pub coords: Vec<FloquetCoord>,
    /// Coulomb part of `V̄` (kg/s²).
    pub coulomb: DMatrix<f64>,
    /// Amplitude damping `γ` per coordinate (rad/s).
    pub damping: Vec<f64>,
    /// Diffusion of `q` and `p` per coordinate (s⁻¹, scaled units).
    pub diffusion_q: Vec<f64>,
    pub diffusion_p: Vec<f64>,
    pub omega_slow: f64,
    pub omega_fast: f64,
    /// When false, `W(t)` is replaced by the secular `Ω²`.
    pub micromotion: bool,
    pub warnings: Vec<Warning>,
}

impl TimeDependentSystem {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Slow period `T_s` (s).
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega_slow
    }

    pub fn fast_period(&self) -> f64 {
        2.0 * PI / self.omega_fast
    }

    /// `W_k(t)` (s⁻²).
    pub fn w(&self, k: usize, t: f64) -> f64 {
        let c = &self.coords[k];
        if !self.micromotion {
            return c.secular_sq;
        }
        c.stiffness * (c.u_dc + c.u_slow * (self.omega_slow * t).cos() + c.u_fast * (self.omega_fast * t).cos())
    }

    /// Full `V̄_m(t)`.
    pub fn potential(&self, t: f64) -> DMatrix<f64> {
        let mut v = self.coulomb.clone();
        for k in 0..self.len() {
            v[(k, k)] += self.coords[k].mass * self.w(k, t);
        }
        v
    }

    /// Drive force `F_k(t) = M_k (W_k(t) - Ω_k²) d_k` (N).
    pub fn force(&self, t: f64) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let c = &self.coords[k];
                c.mass * (self.w(k, t) - c.secular_sq) * c.displacement
            })
            .collect()
    }

    pub fn has_force(&self) -> bool {
        self.micromotion && self.coords.iter().any(|c| !c.is_static() && c.displacement != 0.0)
    }

    pub fn is_constant(&self) -> bool {
        !self.micromotion || self.coords.iter().all(|c| c.is_static())
    }

    /// Drift matrix in the scaled quadrature basis `(q, p)`.
    pub fn drift(&self, t: f64) -> DMatrix<f64> {
        let m = self.len();
        let mut a = DMatrix::zeros(2 * m, 2 * m);
        let v = self.potential(t);
        for k in 0..m {
            let c = &self.coords[k];
            a[(k, k)] = -0.5 * self.damping[k];
            a[(m + k, m + k)] = -0.5 * self.damping[k];
            a[(k, m + k)] = c.omega_prime;
            for l in 0..m {
                a[(m + k, l)] = -v[(k, l)] * self.coords[l].r_zpf / c.p_zpf;
            }
        }
        a
    }

    pub fn diffusion(&self) -> DMatrix<f64> {
        let m = self.len();
        let mut d = DMatrix::zeros(2 * m, 2 * m);
        for k in 0..m {
            d[(k, k)] = self.diffusion_q[k];
            d[(m + k, m + k)] = self.diffusion_p[k];
        }
        d
    }

    /// Subsystem on the given coordinates.
    pub fn block(&self, idx: &[usize]) -> Self {
        TimeDependentSystem {
            coords: idx.iter().map(|&i| self.coords[i].clone()).collect(),
            coulomb: DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.coulomb[(idx[a], idx[b])]),
            damping: idx.iter().map(|&i| self.damping[i]).collect(),
            diffusion_q: idx.iter().map(|&i| self.diffusion_q[i]).collect(),
            diffusion_p: idx.iter().map(|&i| self.diffusion_p[i]).collect(),
            omega_slow: self.omega_slow,
            omega_fast: self.omega_fast,
            micromotion: self.micromotion,
            warnings: Vec::new(),
        }
    }

    /// Independent groups of coordinates.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut v = self.coulomb.clone();
        for k in 0..self.len() {
            v[(k, k)] += self.coords[k].mass * self.coords[k].secular_sq;
        }
        coupling_blocks(&v)
    }

    /// Index of the block containing `(body, axis)`, and the local index.
    pub fn find_block(&self, body: usize, axis: Axis) -> Option<(Vec<usize>, usize)> {
        let k = self.coords.iter().position(|c| c.body == body && c.axis == axis)?;
        self.blocks().into_iter().find_map(|b| b.iter().position(|&i| i == k).map(|p| (b.clone(), p)))
    }

    /// The same system with `W(t)` replaced by its secular value.
    pub fn secular(&self) -> Self {
        TimeDependentSystem {
            micromotion: false,
            ..self.clone()
        }
    }

    /// The same system with damping and diffusion removed.
    pub fn dissipation_free(&self) -> Self {
        let m = self.len();
        TimeDependentSystem {
            damping: vec![0.0; m],
            diffusion_q: vec![0.0; m],
            diffusion_p: vec![0.0; m],
            ..self.clone()
        }
    }
}

/// Rounds `ω_f` to the nearest integer multiple of `ω_s`.
pub fn commensurate_fast_frequency(omega_slow: f64, omega_fast: f64) -> (f64, Option<Warning>) {
    let ratio = omega_fast / omega_slow;
    let n = ratio.round().max(1.0);
    if (ratio - n).abs() <= 1e-9 * ratio {
        (omega_fast, None)
    } else {
        let adjusted = n * omega_slow;
        (
            adjusted,
            Some(Warning::new(
                "commensurability",
                format!("fast/slow drive ratio {ratio} is not an integer; fast drive set to {n} times the slow drive"),
            )),
        )
    }
}

/// Builds the micromotion-resolved system around the equilibrium of
/// `system`. Without `rates` the system is dissipation free.
pub fn build_time_dependent_system(
    system: &LinearizedSystem,
    spec: &SystemSpec,
    rates: Option<&DissipationRates>,
) -> Result<TimeDependentSystem, FloquetError> {
    let trap = &spec.trap;
    let (omega_fast, warning) = commensurate_fast_frequency(trap.omega_slow, trap.omega_fast);
    let p = system.particle();
    let mut coords = Vec::with_capacity(system.dim());
    let mut damping = Vec::with_capacity(system.dim());
    let mut diffusion_q = Vec::with_capacity(system.dim());
    let mut diffusion_p = Vec::with_capacity(system.dim());
    for b in 0..system.n_bodies() {
        let particle = spec.body(b);
        for axis in Axis::ALL {
            let j = axis.index();
            coords.push(FloquetCoord {
                body: b,
                axis,
                is_particle: b == p,
                mass: system.masses[b],
                omega_prime: system.omega_prime(b, axis)?,
                r_zpf: system.r_zpf(b, axis)?,
                p_zpf: system.p_zpf(b, axis)?,
                secular_sq: system.trap_omega[b][j].powi(2),
                stiffness: trap.stiffness(particle, axis),
                u_dc: trap.u_dc[j],
                u_slow: trap.u_slow[j],
                u_fast: trap.u_fast[j],
                displacement: system.positions[b][j],
            });
            match rates {
                None => {
                    damping.push(0.0);
                    diffusion_q.push(0.0);
                    diffusion_p.push(0.0);
                }
                Some(r) if b == p => {
                    let gas = r.gas_heating[j];
                    damping.push(r.gamma_particle());
                    diffusion_q.push(r.gamma_gas + 2.0 * gas);
                    diffusion_p.push(r.gamma_gas + 2.0 * (2.0 * r.particle_heating(axis) - gas));
                }
                Some(r) => {
                    let d = r.gamma_dop + 2.0 * r.doppler_heating[b][j];
                    damping.push(r.gamma_dop);
                    diffusion_q.push(d);
                    diffusion_p.push(d);
                }
            }
        }
    }
    let mut coulomb = system.potential.clone();
    for (k, c) in coords.iter().enumerate() {
        coulomb[(k, k)] -= c.mass * c.secular_sq;
    }
    Ok(TimeDependentSystem {
        coords,
        coulomb,
        damping,
        diffusion_q,
        diffusion_p,
        omega_slow: trap.omega_slow,
        omega_fast,
        micromotion: true,
        warnings: warning.into_iter().collect(),
    })
}

/// Dissipation-free motion of one particle along `axis` in the bare trap.
/// The slow drive frequency sets the quadrature scaling.
pub fn single_particle_system(trap: &TrapConfiguration, particle: &ParticleSpec, axis: Axis) -> TimeDependentSystem {
    let (omega_fast, warning) = commensurate_fast_frequency(trap.omega_slow, trap.omega_fast);
    let j = axis.index();
    let w = trap.omega_slow;
    TimeDependentSystem {
        coords: vec![FloquetCoord {
            body: 0,
            axis,
            is_particle: true,
            mass: particle.mass,
            omega_prime: w,
            r_zpf: (HBAR / (2.0 * particle.mass * w)).sqrt(),
            p_zpf: (HBAR * particle.mass * w / 2.0).sqrt(),
            secular_sq: w * w,
            stiffness: trap.stiffness(particle, axis),
            u_dc: trap.u_dc[j],
            u_slow: trap.u_slow[j],
            u_fast: trap.u_fast[j],
            displacement: 0.0,
        }],
        coulomb: DMatrix::zeros(1, 1),
        damping: vec![0.0],
        diffusion_q: vec![0.0],
        diffusion_p: vec![0.0],
        omega_slow: trap.omega_slow,
        omega_fast,
        micromotion: true,
        warnings: warning.into_iter().collect(),
    }
}

/// Floquet stability of a single particle on every axis of the bare trap.
pub fn single_particle_stable(
    trap: &TrapConfiguration,
    particle: &ParticleSpec,
    settings: &FloquetSettings,
) -> Result<bool, FloquetError> {
    for axis in Axis::ALL {
        let sys = single_particle_system(trap, particle, axis);
        let mono = if sys.coords[0].is_static() {
            constant_monodromy(&sys)
        } else {
            integrate_monodromy(&sys, settings)?
        };
        if !floquet_stability(&mono) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FloquetSettings {
    pub atol: f64,
    pub rtol: f64,
    /// Largest step is `T_f / steps_per_fast_period`.
    pub steps_per_fast_period: f64,
    /// Number of covariance samples stored over one period.
    pub grid_points: usize,
    /// Fixed-step RK4 at `T_f/400` instead of the adaptive integrator.
    pub fixed_step: bool,
    /// Integrate even when the block is time independent.
    pub force_integration: bool,
}

impl Default for FloquetSettings {
    fn default() -> Self {
        FloquetSettings {
            atol: 1e-12,
            rtol: 1e-10,
            steps_per_fast_period: MIN_STEPS_PER_FAST_PERIOD,
            grid_points: 1000,
            fixed_step: false,
            force_integration: false,
        }
    }
}

impl FloquetSettings {
    fn check(&self) -> Result<(), FloquetError> {
        if self.steps_per_fast_period < MIN_STEPS_PER_FAST_PERIOD {
            return Err(FloquetError::ResolutionTooCoarse(self.steps_per_fast_period));
        }
        Ok(())
    }
}

/// Precomputed pieces of the drift for fast evaluation.
struct DriftParts {
    m: usize,
    half_gamma: Vec<f64>,
    omega: Vec<f64>,
    /// `-coulomb_kl R_l / P_k`, row-major.
    k_static: Vec<f64>,
    /// `-M_k R_k / P_k`, multiplies `W_k(t)` on the diagonal.
    k_trap: Vec<f64>,
    /// `-M_k d_k / P_k`, multiplies `W_k(t) - Ω_k²` in the force.
    f_scale: Vec<f64>,
    secular_sq: Vec<f64>,
    stiffness: Vec<f64>,
    u: Vec<[f64; 3]>,
    omega_slow: f64,
    omega_fast: f64,
    micromotion: bool,
}

impl DriftParts {
    fn new(sys: &TimeDependentSystem) -> Self {
        let m = sys.len();
        let mut k_static = vec![0.0; m * m];
        for k in 0..m {
            for l in 0..m {
                k_static[k * m + l] = -sys.coulomb[(k, l)] * sys.coords[l].r_zpf / sys.coords[k].p_zpf;
            }
        }
        DriftParts {
            m,
            half_gamma: sys.damping.iter().map(|g| 0.5 * g).collect(),
            omega: sys.coords.iter().map(|c| c.omega_prime).collect(),
            k_static,
            k_trap: sys.coords.iter().map(|c| -c.mass * c.r_zpf / c.p_zpf).collect(),
            f_scale: sys.coords.iter().map(|c| -c.mass * c.displacement / c.p_zpf).collect(),
            secular_sq: sys.coords.iter().map(|c| c.secular_sq).collect(),
            stiffness: sys.coords.iter().map(|c| c.stiffness).collect(),
            u: sys.coords.iter().map(|c| [c.u_dc, c.u_slow, c.u_fast]).collect(),
            omega_slow: sys.omega_slow,
            omega_fast: sys.omega_fast,
            micromotion: sys.micromotion,
        }
    }

    fn w(&self, t: f64, out: &mut [f64]) {
        if !self.micromotion {
            out.copy_from_slice(&self.secular_sq);
            return;
        }
        let (cs, cf) = ((self.omega_slow * t).cos(), (self.omega_fast * t).cos());
        for k in 0..self.m {
            let u = &self.u[k];
            out[k] = self.stiffness[k] * (u[0] + u[1] * cs + u[2] * cf);
        }
    }

    /// `out = A(t) y` for a column-major `2m × cols` block.
    fn apply(&self, w: &[f64], y: &[f64], cols: usize, out: &mut [f64]) {
        let m = self.m;
        let n = 2 * m;
        for c in 0..cols {
            let yc = &y[c * n..(c + 1) * n];
            let oc = &mut out[c * n..(c + 1) * n];
            for k in 0..m {
                oc[k] = -self.half_gamma[k] * yc[k] + self.omega[k] * yc[m + k];
                let row = &self.k_static[k * m..(k + 1) * m];
                let mut acc = -self.half_gamma[k] * yc[m + k] + self.k_trap[k] * w[k] * yc[k];
                for l in 0..m {
                    acc += row[l] * yc[l];
                }
                oc[m + k] = acc;
            }
        }
    }
}

fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn unpack(packed: &[f64], n: usize, out: &mut [f64]) {
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            out[j * n + i] = packed[idx];
            out[i * n + j] = packed[idx];
            idx += 1;
        }
    }
}

/// Augmented right-hand side: monodromy columns, packed covariance, mean,
/// and purity accumulators for selected coordinates.
struct Augmented<'a> {
    parts: &'a DriftParts,
    with_phi: bool,
    with_cov: bool,
    with_mean: bool,
    purity_coords: Vec<usize>,
    diffusion_q: Vec<f64>,
    diffusion_p: Vec<f64>,
    scratch: RefCell<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl<'a> Augmented<'a> {
    fn new(parts: &'a DriftParts, sys: &TimeDependentSystem, with_phi: bool, with_cov: bool, with_mean: bool) -> Self {
        let n = 2 * parts.m;
        Augmented {
            parts,
            with_phi,
            with_cov,
            with_mean,
            purity_coords: Vec::new(),
            diffusion_q: sys.diffusion_q.clone(),
            diffusion_p: sys.diffusion_p.clone(),
            scratch: RefCell::new((vec![0.0; parts.m], vec![0.0; n * n], vec![0.0; n * n])),
        }
    }

    fn n(&self) -> usize {
        2 * self.parts.m
    }

    fn phi_len(&self) -> usize {
        if self.with_phi {
            self.n() * self.n()
        } else {
            0
        }
    }

    fn cov_len(&self) -> usize {
        if self.with_cov {
            packed_len(self.n())
        } else {
            0
        }
    }

    fn mean_len(&self) -> usize {
        if self.with_mean {
            self.n()
        } else {
            0
        }
    }
}

impl OdeSystem for Augmented<'_> {
    fn dim(&self) -> usize {
        self.phi_len() + self.cov_len() + self.mean_len() + self.purity_coords.len()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n();
        let m = self.parts.m;
        let mut guard = self.scratch.borrow_mut();
        let (w, full, prod) = &mut *guard;
        self.parts.w(t, w);
        let mut off = 0;
        if self.with_phi {
            self.parts.apply(w, &y[..n * n], n, &mut dy[..n * n]);
            off = n * n;
        }
        if self.with_cov {
            let len = packed_len(n);
            unpack(&y[off..off + len], n, full);
            self.parts.apply(w, full, n, prod);
            let mut idx = 0;
            for i in 0..n {
                for j in i..n {
                    // (AΣ)_ij + (AΣ)_ji with prod column-major.
                    let mut v = prod[j * n + i] + prod[i * n + j];
                    if i == j {
                        v += if i < m { self.diffusion_q[i] } else { self.diffusion_p[i - m] };
                    }
                    dy[off + idx] = v;
                    idx += 1;
                }
            }
            off += len;
        }
        if self.with_mean {
            self.parts.apply(w, &y[off..off + n], 1, &mut dy[off..off + n]);
            if self.parts.micromotion {
                for k in 0..m {
                    dy[off + m + k] += self.parts.f_scale[k] * (w[k] - self.parts.secular_sq[k]);
                }
            }
            off += n;
        }
        if !self.purity_coords.is_empty() {
            let cov_off = self.phi_len();
            unpack(&y[cov_off..cov_off + packed_len(n)], n, full);
            for (a, &k) in self.purity_coords.iter().enumerate() {
                let det = full[k * n + k] * full[(m + k) * n + m + k] - full[(m + k) * n + k].powi(2);
                dy[off + a] = 1.0 / det.max(f64::MIN_POSITIVE).sqrt();
            }
        }
    }
}

fn run<S, F>(sys: &S, settings: &FloquetSettings, t0: f64, t1: f64, fast_period: f64, y: &mut [f64], observer: F) -> Result<(), FloquetError>
where
    S: OdeSystem,
    F: FnMut(&dyn StepInterpolant),
{
    if settings.fixed_step {
        let steps = ((t1 - t0) / (fast_period / 400.0)).ceil() as usize;
        integrate_rk4(sys, t0, t1, steps.max(1), y, observer)?;
    } else {
        Dopri5::with_tolerances(settings.atol, settings.rtol)
            .h_max(fast_period / settings.steps_per_fast_period)
            .integrate(sys, t0, t1, y, observer)?;
    }
    Ok(())
}

/// Monodromy matrix and multipliers of one period.
#[derive(Clone, Debug)]
pub struct Monodromy {
    pub phi: DMatrix<f64>,
    pub multipliers: Vec<Complex<f64>>,
    pub max_modulus: f64,
}

fn multipliers_of(phi: &DMatrix<f64>) -> Vec<Complex<f64>> {
    phi.complex_eigenvalues().iter().copied().collect()
}

fn monodromy_from(phi: DMatrix<f64>) -> Monodromy {
    let multipliers = multipliers_of(&phi);
    let max_modulus = multipliers.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Monodromy {
        phi,
        multipliers,
        max_modulus,
    }
}

/// Integrates `Ẋ = A(t) X`, `X(0) = 1` over one slow period.
pub fn integrate_monodromy(sys: &TimeDependentSystem, settings: &FloquetSettings) -> Result<Monodromy, FloquetError> {
    settings.check()?;
    let n = 2 * sys.len();
    let parts = DriftParts::new(sys);
    let aug = Augmented::new(&parts, sys, true, false, false);
    let mut y = DMatrix::<f64>::identity(n, n).as_slice().to_vec();
    run(&aug, settings, 0.0, sys.period(), sys.fast_period(), &mut y, |_| {})?;
    Ok(monodromy_from(DMatrix::from_column_slice(n, n, &y)))
}

/// Monodromy of a constant drift by matrix exponential.
pub fn constant_monodromy(sys: &TimeDependentSystem) -> Monodromy {
    monodromy_from((sys.drift(0.0) * sys.period()).exp())
}

/// `max |λ| ≤ 1 + 10⁻⁶`.
pub fn floquet_stability(monodromy: &Monodromy) -> bool {
    monodromy.max_modulus <= 1.0 + MULTIPLIER_TOL
}

/// Dissipation-free Floquet screening of an equilibrium.
pub fn screen_configuration(spec: &SystemSpec, positions: &[[f64; 3]]) -> Result<bool, FloquetError> {
    let system = LinearizedSystem::from_positions(positions, spec)?;
    let full = build_time_dependent_system(&system, spec, None)?;
    let settings = FloquetSettings::default();
    for block in full.blocks() {
        let sub = full.block(&block);
        let mono = if sub.is_constant() {
            constant_monodromy(&sub)
        } else {
            integrate_monodromy(&sub, &settings)?
        };
        if !floquet_stability(&mono) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Periodic steady state of one block.
#[derive(Clone, Debug)]
pub struct FloquetSolution {
    pub monodromy: Monodromy,
    pub stable: bool,
    /// Sample times over `[0, T_s]` (s).
    pub times: Vec<f64>,
    /// Scaled covariance at each sample time.
    pub covariance: Vec<DMatrix<f64>>,
    /// Scaled first moments at each sample time, when a drive force exists.
    pub means: Option<Vec<DVector<f64>>>,
    /// `(1/T_s) ∫ 1/sqrt(det Σ_k) dt` for every nanoparticle coordinate.
    pub purity: Vec<Option<f64>>,
    /// `‖Σ(T_s) - Σ(0)‖ / ‖Σ(0)‖` after propagating the fixed point.
    pub periodicity_error: f64,
    pub system: TimeDependentSystem,
}

fn solve_discrete_lyapunov(phi: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, FloquetError> {
    let n = phi.nrows();
    let mut k = DMatrix::<f64>::identity(n * n, n * n);
    // vec column-major: vec(Φ Σ Φᵀ) = (Φ ⊗ Φ) vec Σ.
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    k[(b * n + a, d * n + c)] -= phi[(a, c)] * phi[(b, d)];
                }
            }
        }
    }
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = k.lu().solve(&rhs).ok_or(FloquetError::SingularResolvent)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FloquetError::SingularResolvent);
    }
    let s = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&s + s.transpose()) * 0.5)
}

fn uniform_grid(period: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|i| period * i as f64 / (points - 1) as f64).collect()
}

/// Periodic first and second moments of a block.
pub fn periodic_steady_state(sys: &TimeDependentSystem, settings: &FloquetSettings) -> Result<FloquetSolution, FloquetError> {
    settings.check()?;
    let n = 2 * sys.len();
    let m = sys.len();
    let period = sys.period();
    let times = uniform_grid(period, settings.grid_points);
    let particle_coords: Vec<usize> = (0..m).filter(|&k| sys.coords[k].is_particle).collect();

    if sys.is_constant() && !settings.force_integration {
        let a = sys.drift(0.0);
        let sol = solve_continuous_real(&a, &sys.diffusion())?;
        let cov = (&sol.sigma + sol.sigma.transpose()) * 0.5;
        let monodromy = constant_monodromy(sys);
        let stable = floquet_stability(&monodromy);
        let purity = (0..m)
            .map(|k| {
                sys.coords[k].is_particle.then(|| {
                    let det = cov[(k, k)] * cov[(m + k, m + k)] - cov[(k, m + k)].powi(2);
                    1.0 / det.sqrt()
                })
            })
            .collect();
        return Ok(FloquetSolution {
            monodromy,
            stable,
            covariance: vec![cov; times.len()],
            means: None,
            times,
            purity,
            periodicity_error: 0.0,
            system: sys.clone(),
        });
    }

    let parts = DriftParts::new(sys);
    let with_mean = sys.has_force();
    let aug = Augmented::new(&parts, sys, true, true, with_mean);
    let mut y = vec![0.0; aug.dim()];
    y[..n * n].copy_from_slice(DMatrix::<f64>::identity(n, n).as_slice());
    run(&aug, settings, 0.0, period, sys.fast_period(), &mut y, |_| {})?;
    let phi = DMatrix::from_column_slice(n, n, &y[..n * n]);
    let monodromy = monodromy_from(phi.clone());
    let stable = floquet_stability(&monodromy);
    if !stable {
        return Err(FloquetError::Unstable(monodromy.max_modulus));
    }
    let mut q = vec![0.0; n * n];
    unpack(&y[n * n..n * n + packed_len(n)], n, &mut q);
    let sigma0 = solve_discrete_lyapunov(&phi, &DMatrix::from_column_slice(n, n, &q))?;
    let mean0 = if with_mean {
        let off = n * n + packed_len(n);
        let mp = DVector::from_column_slice(&y[off..off + n]);
        let lhs = DMatrix::<f64>::identity(n, n) - &phi;
        Some(lhs.lu().solve(&mp).ok_or(FloquetError::SingularResolvent)?)
    } else {
        None
    };

    // Second pass from the fixed point, sampling the grid.
    let mut aug2 = Augmented::new(&parts, sys, false, true, with_mean);
    aug2.purity_coords = particle_coords.clone();
    let mut y2 = vec![0.0; aug2.dim()];
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            y2[idx] = sigma0[(i, j)];
            idx += 1;
        }
    }
    if let Some(m0) = &mean0 {
        y2[idx..idx + n].copy_from_slice(m0.as_slice());
    }
    let mut covariance = Vec::with_capacity(times.len());
    let mut means = with_mean.then(Vec::new);
    let mut next = 0;
    let mut buf = vec![0.0; aug2.dim()];
    let mut full = vec![0.0; n * n];
    let mut record = |state: &[f64], covariance: &mut Vec<DMatrix<f64>>, means: &mut Option<Vec<DVector<f64>>>| {
        unpack(&state[..packed_len(n)], n, &mut full);
        covariance.push(DMatrix::from_column_slice(n, n, &full));
        if let Some(ms) = means.as_mut() {
            let off = packed_len(n);
            ms.push(DVector::from_column_slice(&state[off..off + n]));
        }
    };
    record(&y2, &mut covariance, &mut means);
    next += 1;
    run(&aug2, settings, 0.0, period, sys.fast_period(), &mut y2, |step| {
        while next < times.len() && times[next] <= step.t_end() {
            step.eval(times[next], &mut buf);
            record(&buf, &mut covariance, &mut means);
            next += 1;
        }
    })?;
    while covariance.len() < times.len() {
        record(&y2, &mut covariance, &mut means);
    }
    let end = covariance.last().expect("grid has points");
    let periodicity_error = (end - &sigma0).norm() / sigma0.norm();
    let acc_off = packed_len(n) + if with_mean { n } else { 0 };
    let mut purity = vec![None; m];
    for (a, &k) in particle_coords.iter().enumerate() {
        purity[k] = Some(y2[acc_off + a] / period);
    }
    Ok(FloquetSolution {
        monodromy,
        stable,
        times,
        covariance,
        means,
        purity,
        periodicity_error,
        system: sys.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct PurityResult {
    pub purity: f64,
    pub n_eff: f64,
    pub times: Vec<f64>,
    /// Kinetic energy `⟨P²⟩/(2M)` at each sample (J).
    pub kinetic: Vec<f64>,
    /// Potential energy `V_kk(t) ⟨δR²⟩/2` at each sample (J).
    pub potential: Vec<f64>,
}

/// Tolerance on `det Σ ≥ 1` in scaled units.
const DET_TOL: f64 = 1e-6;

/// Time-averaged purity of coordinate `k` (local block index).
pub fn time_averaged_purity(solution: &FloquetSolution, k: usize) -> Result<PurityResult, FloquetError> {
    let sys = &solution.system;
    let m = sys.len();
    let mu = solution
        .purity
        .get(k)
        .copied()
        .flatten()
        .ok_or(FloquetError::NotParticleCoordinate(k))?;
    let c = &sys.coords[k];
    let mut kinetic = Vec::with_capacity(solution.times.len());
    let mut potential = Vec::with_capacity(solution.times.len());
    for (t, cov) in solution.times.iter().zip(&solution.covariance) {
        let det = cov[(k, k)] * cov[(m + k, m + k)] - cov[(k, m + k)].powi(2);
        if det < 1.0 - DET_TOL {
            return Err(FloquetError::NonPhysicalCovariance(det));
        }
        let vkk = sys.coulomb[(k, k)] + c.mass * sys.w(k, *t);
        kinetic.push(c.p_zpf * c.p_zpf * cov[(m + k, m + k)] / (2.0 * c.mass));
        potential.push(0.5 * vkk * c.r_zpf * c.r_zpf * cov[(k, k)]);
    }
    if mu > 1.0 + 1e-9 {
        return Err(FloquetError::NonPhysicalCovariance(1.0 / (mu * mu)));
    }
    Ok(PurityResult {
        purity: mu,
        n_eff: purity_to_occupation(mu),
        times: solution.times.clone(),
        kinetic,
        potential,
    })
}

/// `n = (1/μ - 1)/2`.
pub fn purity_to_occupation(mu: f64) -> f64 {
    0.5 * (1.0 / mu - 1.0)
}

/// Effective nanoparticle occupation along `axis`, with or without
/// micromotion.
pub fn particle_occupation(
    sys: &TimeDependentSystem,
    particle: usize,
    axis: Axis,
    settings: &FloquetSettings,
) -> Result<(PurityResult, FloquetSolution), FloquetError> {
    let (block, local) = sys
        .find_block(particle, axis)
        .ok_or(FloquetError::NotParticleCoordinate(particle))?;
    let sub = sys.block(&block);
    let solution = periodic_steady_state(&sub, settings)?;
    Ok((time_averaged_purity(&solution, local)?, solution))
}
