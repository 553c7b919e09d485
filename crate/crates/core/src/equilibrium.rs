//! Static equilibria of one nanoparticle and `N` identical ions.
//!
//! Bodies are indexed ions first (`0..N`) and the nanoparticle last (`N`).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::constants::coulomb_k;
use crate::diagnostics::Warning;
use crate::linear_system::{dynamical_stability, potential_matrix, LinearizedSystem};
use crate::trap_model::{secular_spectrum, Axis, ParticleSpec, SecularMethod, TrapConfiguration, TrapError};

/// Root-finder convergence target per coordinate (N).
pub const ROOT_TOL: f64 = 1e-26;
/// Largest residual per coordinate accepted as an equilibrium (N).
pub const ROOT_ACCEPT: f64 = 1e-24;
/// Separations below this are treated as coincident (m).
pub const COINCIDENCE_DISTANCE: f64 = 1e-12;
/// Off-axis coordinates below this count as on-axis (m).
pub const AXIS_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("bodies {a} and {b} coincide")]
    CoincidentParticles { a: usize, b: usize },
    #[error("invalid system: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Trap(#[from] TrapError),
}

/// One nanoparticle and `n_ions` identical ions in a common trap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemSpec {
    pub trap: TrapConfiguration,
    pub nanoparticle: ParticleSpec,
    pub ion: ParticleSpec,
    pub n_ions: usize,
    /// Secular frequencies of the nanoparticle (rad/s).
    pub omega_particle: [f64; 3],
    /// Secular frequencies of an ion (rad/s).
    pub omega_ion: [f64; 3],
}

impl SystemSpec {
    /// Builds the system with secular frequencies from [`secular_spectrum`].
    pub fn new(
        trap: TrapConfiguration,
        nanoparticle: ParticleSpec,
        ion: ParticleSpec,
        n_ions: usize,
        method: SecularMethod,
    ) -> Result<(Self, Vec<Warning>), EquilibriumError> {
        let sp = secular_spectrum(&trap, &nanoparticle, method)?;
        let si = secular_spectrum(&trap, &ion, method)?;
        let mut warnings = sp.warnings.clone();
        for w in si.warnings.iter().cloned() {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        let spec = Self::with_frequencies(trap, nanoparticle, ion, n_ions, sp.omegas(), si.omegas())?;
        Ok((spec, warnings))
    }

    pub fn with_frequencies(
        trap: TrapConfiguration,
        nanoparticle: ParticleSpec,
        ion: ParticleSpec,
        n_ions: usize,
        omega_particle: [f64; 3],
        omega_ion: [f64; 3],
    ) -> Result<Self, EquilibriumError> {
        let spec = SystemSpec {
            trap,
            nanoparticle,
            ion,
            n_ions,
            omega_particle,
            omega_ion,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), EquilibriumError> {
        self.nanoparticle.validate()?;
        self.ion.validate()?;
        if self.n_ions == 0 {
            return Err(EquilibriumError::InvalidSpec("at least one ion is required".into()));
        }
        if !(self.nanoparticle.charge * self.ion.charge > 0.0) {
            return Err(EquilibriumError::InvalidSpec(
                "ion and nanoparticle charges must have the same sign".into(),
            ));
        }
        let ok = |w: &[f64; 3]| w.iter().all(|x| x.is_finite() && *x > 0.0);
        if !ok(&self.omega_particle) || !ok(&self.omega_ion) {
            return Err(EquilibriumError::InvalidSpec("secular frequencies must be positive".into()));
        }
        Ok(())
    }

    pub fn with_ions(&self, n_ions: usize) -> Self {
        SystemSpec {
            n_ions,
            ..self.clone()
        }
    }

    pub fn n_bodies(&self) -> usize {
        self.n_ions + 1
    }

    pub fn body(&self, b: usize) -> &ParticleSpec {
        if b < self.n_ions {
            &self.ion
        } else {
            &self.nanoparticle
        }
    }

    pub fn body_mass(&self, b: usize) -> f64 {
        self.body(b).mass
    }

    pub fn body_charge(&self, b: usize) -> f64 {
        self.body(b).charge
    }

    pub fn body_omega(&self, b: usize) -> [f64; 3] {
        if b < self.n_ions {
            self.omega_ion
        } else {
            self.omega_particle
        }
    }

    fn check_len(&self, positions: &[[f64; 3]]) -> Result<(), EquilibriumError> {
        if positions.len() != self.n_bodies() {
            return Err(EquilibriumError::InvalidSpec(format!(
                "expected {} positions, got {}",
                self.n_bodies(),
                positions.len()
            )));
        }
        Ok(())
    }
}

fn separation(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Pairwise Coulomb energy (J).
pub fn coulomb_energy(positions: &[[f64; 3]], spec: &SystemSpec) -> Result<f64, EquilibriumError> {
    spec.check_len(positions)?;
    let k = coulomb_k();
    let mut e = 0.0;
    for a in 0..positions.len() {
        for b in (a + 1)..positions.len() {
            let d = separation(&positions[a], &positions[b]);
            if !(d > COINCIDENCE_DISTANCE) {
                return Err(EquilibriumError::CoincidentParticles { a, b });
            }
            e += k * spec.body_charge(a) * spec.body_charge(b) / d;
        }
    }
    Ok(e)
}

/// Harmonic secular trap energy `Σ ½ M Ω² R²` (J).
pub fn trap_energy(positions: &[[f64; 3]], spec: &SystemSpec) -> Result<f64, EquilibriumError> {
    spec.check_len(positions)?;
    Ok(positions
        .iter()
        .enumerate()
        .map(|(b, r)| {
            let w = spec.body_omega(b);
            0.5 * spec.body_mass(b) * (0..3).map(|j| w[j] * w[j] * r[j] * r[j]).sum::<f64>()
        })
        .sum())
}

pub fn total_energy(positions: &[[f64; 3]], spec: &SystemSpec) -> Result<f64, EquilibriumError> {
    Ok(trap_energy(positions, spec)? + coulomb_energy(positions, spec)?)
}

/// Gradient of the total potential energy, `M Ω² R + ∂V/∂R` per coordinate (N).
pub fn force_residual(positions: &[[f64; 3]], spec: &SystemSpec) -> Result<Vec<f64>, EquilibriumError> {
    spec.check_len(positions)?;
    let n = positions.len();
    let mut f = vec![0.0; 3 * n];
    for (b, r) in positions.iter().enumerate() {
        let m = spec.body_mass(b);
        let w = spec.body_omega(b);
        for j in 0..3 {
            f[3 * b + j] = m * w[j] * w[j] * r[j];
        }
    }
    let k = coulomb_k();
    for a in 0..n {
        for b in (a + 1)..n {
            let d = separation(&positions[a], &positions[b]);
            if !(d > COINCIDENCE_DISTANCE) {
                return Err(EquilibriumError::CoincidentParticles { a, b });
            }
            let c = k * spec.body_charge(a) * spec.body_charge(b) / (d * d * d);
            for j in 0..3 {
                let fj = c * (positions[a][j] - positions[b][j]);
                f[3 * a + j] -= fj;
                f[3 * b + j] += fj;
            }
        }
    }
    Ok(f)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    OnAxis(Axis),
    OffAxis,
}

/// Arrangement of ions around the nanoparticle for on-axis chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainTopology {
    /// All ions on one side of the nanoparticle.
    OneSided,
    /// Ions on both sides.
    Split { below: usize, above: usize },
}

/// Axis shared by all bodies, if any.
pub fn classify_layout(positions: &[[f64; 3]]) -> Option<Axis> {
    Axis::ALL.into_iter().find(|axis| {
        positions
            .iter()
            .all(|r| (0..3).all(|j| j == axis.index() || r[j].abs() < AXIS_TOL))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquilibriumConfiguration {
    /// Nanoparticle position (m).
    pub nanoparticle: [f64; 3],
    /// Ion positions (m).
    pub ions: Vec<[f64; 3]>,
    /// Largest force residual over all coordinates (N).
    pub residual_norm: f64,
    pub dynamically_stable: bool,
    /// `None` when the Floquet check was not run.
    pub floquet_stable: Option<bool>,
    pub layout: Layout,
    pub topology: Option<ChainTopology>,
    /// Number of restarts that converged to this configuration.
    pub hits: usize,
}

impl EquilibriumConfiguration {
    pub fn from_positions(positions: Vec<[f64; 3]>, spec: &SystemSpec) -> Result<Self, EquilibriumError> {
        spec.check_len(&positions)?;
        let residual_norm = max_abs(&force_residual(&positions, spec)?);
        let system = LinearizedSystem::from_positions(&positions, spec).map_err(|e| match e {
            crate::linear_system::LinearError::Equilibrium(e) => e,
            other => EquilibriumError::InvalidSpec(other.to_string()),
        })?;
        let dynamically_stable = dynamical_stability(&system).stable;
        let layout = match classify_layout(&positions) {
            Some(a) => Layout::OnAxis(a),
            None => Layout::OffAxis,
        };
        let mut ions = positions;
        let nanoparticle = ions.pop().expect("at least one body");
        let topology = match layout {
            Layout::OnAxis(Axis::Z) => {
                let below = ions.iter().filter(|r| r[2] < nanoparticle[2]).count();
                let above = ions.len() - below;
                Some(if below == 0 || above == 0 {
                    ChainTopology::OneSided
                } else {
                    ChainTopology::Split { below, above }
                })
            }
            _ => None,
        };
        Ok(EquilibriumConfiguration {
            nanoparticle,
            ions,
            residual_norm,
            dynamically_stable,
            floquet_stable: None,
            layout,
            topology,
            hits: 1,
        })
    }

    /// Positions in body order, nanoparticle last.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        let mut p = self.ions.clone();
        p.push(self.nanoparticle);
        p
    }

    /// Stable under both criteria. An unchecked Floquet flag counts as stable.
    pub fn is_stable(&self) -> bool {
        self.dynamically_stable && self.floquet_stable != Some(false)
    }

    /// Smallest nanoparticle-ion separation (m).
    pub fn min_particle_separation(&self) -> f64 {
        self.ions
            .iter()
            .map(|r| separation(r, &self.nanoparticle))
            .fold(f64::INFINITY, f64::min)
    }

    /// True when the ions match those of `other` one to one within `tol`.
    pub fn same_as(&self, other: &Self, tol: f64) -> bool {
        let close = |a: &[f64; 3], b: &[f64; 3]| (0..3).all(|j| (a[j] - b[j]).abs() < tol);
        if self.ions.len() != other.ions.len() || !close(&self.nanoparticle, &other.nanoparticle) {
            return false;
        }
        let mut used = vec![false; other.ions.len()];
        self.ions.iter().all(|a| {
            match (0..other.ions.len()).find(|&k| !used[k] && close(a, &other.ions[k])) {
                Some(k) => {
                    used[k] = true;
                    true
                }
                None => false,
            }
        })
    }

    fn canonicalize(&mut self) {
        self.ions.sort_by(|a, b| {
            a[2].total_cmp(&b[2])
                .then(a[1].total_cmp(&b[1]))
                .then(a[0].total_cmp(&b[0]))
        });
    }
}

/// Analytic equilibrium of one ion and the nanoparticle along `axis`. The
/// ion sits on the positive side.
pub fn two_body_equilibrium(spec: &SystemSpec, axis: Axis) -> Result<EquilibriumConfiguration, EquilibriumError> {
    if spec.n_ions != 1 {
        return Err(EquilibriumError::InvalidSpec("two-body equilibrium needs exactly one ion".into()));
    }
    let j = axis.index();
    let kp = spec.nanoparticle.mass * spec.omega_particle[j].powi(2);
    let ki = spec.ion.mass * spec.omega_ion[j].powi(2);
    let qq = coulomb_k() * spec.nanoparticle.charge * spec.ion.charge;
    let d = (qq * (1.0 / kp + 1.0 / ki)).cbrt();
    let force = qq / (d * d);
    let mut ion = [0.0; 3];
    let mut particle = [0.0; 3];
    ion[j] = force / ki;
    particle[j] = -force / kp;
    let mut positions = vec![ion, particle];
    polish(&mut positions, spec, &[j, 3 + j]);
    EquilibriumConfiguration::from_positions(positions, spec)
}

/// A few Newton steps restricted to the free coordinates; leaves the input
/// untouched if they do not help.
fn polish(positions: &mut [[f64; 3]], spec: &SystemSpec, free: &[usize]) {
    let mut x: Vec<f64> = positions.iter().flat_map(|r| r.iter().copied()).collect();
    if let Some(r) = newton(spec, &mut x, free, 20) {
        if r < ROOT_ACCEPT {
            for (b, p) in positions.iter_mut().enumerate() {
                p.copy_from_slice(&x[3 * b..3 * b + 3]);
            }
        }
    }
}

fn unflatten(x: &[f64]) -> Vec<[f64; 3]> {
    x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn residual_free(spec: &SystemSpec, x: &[f64], free: &[usize]) -> Option<Vec<f64>> {
    let f = force_residual(&unflatten(x), spec).ok()?;
    Some(free.iter().map(|&i| f[i]).collect())
}

/// Damped Newton iteration on the force map. Returns the final largest
/// residual component.
fn newton(spec: &SystemSpec, x: &mut [f64], free: &[usize], max_iter: usize) -> Option<f64> {
    let mut f = residual_free(spec, x, free)?;
    let mut norm2: f64 = f.iter().map(|v| v * v).sum();
    for _ in 0..max_iter {
        let r = max_abs(&f);
        if r < ROOT_TOL {
            return Some(r);
        }
        let h = potential_matrix(&unflatten(x), spec).ok()?;
        let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let rhs = DVector::from_iterator(free.len(), f.iter().map(|v| -v));
        let step = hf.lu().solve(&rhs)?;
        if step.iter().any(|s| !s.is_finite()) {
            return None;
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-12 {
            let mut trial = x.to_vec();
            for (k, &i) in free.iter().enumerate() {
                trial[i] += lambda * step[k];
            }
            if let Some(ft) = residual_free(spec, &trial, free) {
                let n2: f64 = ft.iter().map(|v| v * v).sum();
                if n2 < norm2 {
                    x.copy_from_slice(&trial);
                    f = ft;
                    norm2 = n2;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let r = max_abs(&f);
    (r < ROOT_ACCEPT).then_some(r)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchSettings {
    pub restarts: usize,
    /// Seeds are drawn uniformly in `[-w, w]` per coordinate (m).
    pub seed_half_width: f64,
    pub seed: u64,
    /// Configurations closer than this are merged (m).
    pub dedup_distance: f64,
    /// Only z coordinates are free; x and y are held at zero.
    pub axis_restricted: bool,
    /// Run the Floquet check on dynamically stable candidates.
    pub floquet_check: bool,
    /// Solutions hit by fewer than this fraction of restarts are dropped.
    pub rare_fraction: f64,
    pub max_iterations: usize,
}

impl SearchSettings {
    /// `5000 + N!` free restarts for `N ≤ 8`, otherwise `10⁴ N` axis-restricted.
    pub fn default_for(n_ions: usize) -> Self {
        let (restarts, axis_restricted) = if n_ions <= 8 {
            (5000 + (1..=n_ions).product::<usize>(), false)
        } else {
            (10_000 * n_ions, true)
        };
        SearchSettings {
            restarts,
            axis_restricted,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EquilibriumError> {
        if self.restarts == 0 {
            return Err(EquilibriumError::InvalidSpec("restarts must be at least 1".into()));
        }
        if !(self.seed_half_width > 0.0) {
            return Err(EquilibriumError::InvalidSpec("seed half-width must be positive".into()));
        }
        if !(self.dedup_distance > 0.0) {
            return Err(EquilibriumError::InvalidSpec("dedup distance must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            restarts: 5001,
            seed_half_width: 100e-6,
            seed: 0,
            dedup_distance: 1e-9,
            axis_restricted: false,
            floquet_check: true,
            rare_fraction: 1e-4,
            max_iterations: 200,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchOutcome {
    /// Unique configurations in order of first discovery, with flags set.
    pub configurations: Vec<EquilibriumConfiguration>,
    pub restarts: usize,
    pub converged: usize,
    /// Unique solutions dropped for being found too rarely.
    pub discarded_rare: usize,
    /// Converged solutions violating the point-charge separation bound.
    pub rejected_close: usize,
    pub warnings: Vec<Warning>,
}

impl SearchOutcome {
    pub fn stable(&self) -> Vec<&EquilibriumConfiguration> {
        self.configurations.iter().filter(|c| c.is_stable()).collect()
    }
}

fn seeded_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Multi-start search for static equilibria.
pub fn find_equilibria(spec: &SystemSpec, settings: &SearchSettings) -> Result<SearchOutcome, EquilibriumError> {
    spec.validate()?;
    settings.validate()?;
    let nb = spec.n_bodies();
    let free: Vec<usize> = if settings.axis_restricted {
        (0..nb).map(|b| 3 * b + 2).collect()
    } else {
        (0..3 * nb).collect()
    };
    let w = settings.seed_half_width;
    let runs: Vec<Option<Vec<f64>>> = (0..settings.restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded_rng(settings.seed, i);
            let mut x = vec![0.0; 3 * nb];
            for &k in &free {
                x[k] = rng.random_range(-w..w);
            }
            newton(spec, &mut x, &free, settings.max_iterations).map(|_| x)
        })
        .collect();

    let min_sep = 10.0 * spec.nanoparticle.radius.max(spec.ion.radius);
    let mut unique: Vec<EquilibriumConfiguration> = Vec::new();
    let mut converged = 0;
    let mut rejected_close = 0;
    for x in runs.into_iter().flatten() {
        converged += 1;
        let mut c = match EquilibriumConfiguration::from_positions(unflatten(&x), spec) {
            Ok(c) => c,
            Err(_) => continue,
        };
        c.canonicalize();
        let positions = c.positions();
        let too_close = (0..nb).any(|a| (a + 1..nb).any(|b| separation(&positions[a], &positions[b]) <= min_sep));
        if too_close {
            rejected_close += 1;
            continue;
        }
        match unique.iter_mut().find(|u| u.same_as(&c, settings.dedup_distance)) {
            Some(u) => u.hits += 1,
            None => unique.push(c),
        }
    }
    let threshold = settings.rare_fraction * settings.restarts as f64;
    let before = unique.len();
    unique.retain(|c| c.hits as f64 >= threshold);
    let discarded_rare = before - unique.len();

    let mut warnings = Vec::new();
    if settings.floquet_check {
        let checks: Vec<Result<bool, String>> = unique
            .par_iter()
            .map(|c| {
                if !c.dynamically_stable {
                    return Ok(false);
                }
                crate::floquet::screen_configuration(spec, &c.positions()).map_err(|e| e.to_string())
            })
            .collect();
        for (c, r) in unique.iter_mut().zip(checks) {
            if c.dynamically_stable {
                match r {
                    Ok(s) => c.floquet_stable = Some(s),
                    Err(e) => {
                        c.floquet_stable = Some(false);
                        warnings.push(Warning::new("floquet-screen", format!("Floquet screening failed: {e}")));
                    }
                }
            }
        }
    }
    if !unique.iter().any(|c| c.is_stable()) {
        warnings.push(Warning::new(
            "no-stable-equilibrium",
            format!("no stable equilibrium found for N = {}", spec.n_ions),
        ));
    }
    Ok(SearchOutcome {
        configurations: unique,
        restarts: settings.restarts,
        converged,
        discarded_rare,
        rejected_close,
        warnings,
    })
}
