//! Quadratic expansion of the trap plus Coulomb potential around an
//! equilibrium.
//!
//! Coordinates are stacked body by body, ions first and the nanoparticle
//! last, with three Cartesian components each: index `3 b + j`.

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::constants::{coulomb_k, HBAR};
use crate::equilibrium::{EquilibriumConfiguration, EquilibriumError, SystemSpec, ROOT_ACCEPT};
use crate::trap_model::Axis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("equilibrium is not converged (residual {0:e} N)")]
    NotConverged(f64),
    #[error("imaginary renormalized frequency for body {body} on axis {axis}")]
    ImaginaryFrequency { body: usize, axis: Axis },
    #[error("two-body coupling formula needs a single ion on a trap axis")]
    OffAxisLayout,
    #[error("ion block is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Second-order expansion `H = ½ Pᵀ M̄ P + ½ Xᵀ V̄ X`.
#[derive(Clone, Debug)]
pub struct LinearizedSystem {
    pub n_ions: usize,
    /// Mass of every body (kg), ions first.
    pub masses: Vec<f64>,
    /// Diagonal of `M̄` (kg⁻¹), one entry per coordinate.
    pub inverse_mass: Vec<f64>,
    /// Generalized potential matrix `V̄` (kg/s²).
    pub potential: DMatrix<f64>,
    /// Bare secular trap frequencies per body (rad/s).
    pub trap_omega: Vec<[f64; 3]>,
    /// Equilibrium positions the expansion is taken around (m).
    pub positions: Vec<[f64; 3]>,
}

pub fn coord(body: usize, axis: Axis) -> usize {
    3 * body + axis.index()
}

/// Hessian of trap plus Coulomb energy at `positions`.
pub fn potential_matrix(positions: &[[f64; 3]], spec: &SystemSpec) -> Result<DMatrix<f64>, EquilibriumError> {
    let n = positions.len();
    let mut v = DMatrix::zeros(3 * n, 3 * n);
    for b in 0..n {
        let m = spec.body_mass(b);
        let w = spec.body_omega(b);
        for j in 0..3 {
            v[(3 * b + j, 3 * b + j)] += m * w[j] * w[j];
        }
    }
    let k = coulomb_k();
    for a in 0..n {
        for b in (a + 1)..n {
            let r = [
                positions[a][0] - positions[b][0],
                positions[a][1] - positions[b][1],
                positions[a][2] - positions[b][2],
            ];
            let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if !(d > crate::equilibrium::COINCIDENCE_DISTANCE) {
                return Err(EquilibriumError::CoincidentParticles { a, b });
            }
            let c = k * spec.body_charge(a) * spec.body_charge(b) / (d * d * d);
            for i in 0..3 {
                for j in 0..3 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    // Coulomb block N = c (1 - 3 u u).
                    let nij = c * (delta - 3.0 * r[i] * r[j] / (d * d));
                    v[(3 * a + i, 3 * a + j)] -= nij;
                    v[(3 * b + i, 3 * b + j)] -= nij;
                    v[(3 * a + i, 3 * b + j)] += nij;
                    v[(3 * b + i, 3 * a + j)] += nij;
                }
            }
        }
    }
    Ok(v)
}

impl LinearizedSystem {
    pub fn from_positions(positions: &[[f64; 3]], spec: &SystemSpec) -> Result<Self, LinearError> {
        let n = positions.len();
        let masses: Vec<f64> = (0..n).map(|b| spec.body_mass(b)).collect();
        let inverse_mass = masses.iter().flat_map(|m| [1.0 / m; 3]).collect();
        Ok(LinearizedSystem {
            n_ions: n - 1,
            masses,
            inverse_mass,
            potential: potential_matrix(positions, spec)?,
            trap_omega: (0..n).map(|b| spec.body_omega(b)).collect(),
            positions: positions.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.potential.nrows()
    }

    pub fn n_bodies(&self) -> usize {
        self.masses.len()
    }

    /// Body index of the nanoparticle.
    pub fn particle(&self) -> usize {
        self.n_ions
    }

    /// `Ω'²` of a coordinate (may be negative).
    pub fn omega_sq(&self, body: usize, axis: Axis) -> f64 {
        let i = coord(body, axis);
        self.potential[(i, i)] / self.masses[body]
    }

    pub fn omega_prime(&self, body: usize, axis: Axis) -> Result<f64, LinearError> {
        let w2 = self.omega_sq(body, axis);
        if w2 > 0.0 {
            Ok(w2.sqrt())
        } else {
            Err(LinearError::ImaginaryFrequency { body, axis })
        }
    }

    /// Zero-point length `sqrt(ħ / (2 M Ω'))`.
    pub fn r_zpf(&self, body: usize, axis: Axis) -> Result<f64, LinearError> {
        let w = self.omega_prime(body, axis)?;
        Ok((HBAR / (2.0 * self.masses[body] * w)).sqrt())
    }

    /// Zero-point momentum `sqrt(ħ M Ω' / 2)`.
    pub fn p_zpf(&self, body: usize, axis: Axis) -> Result<f64, LinearError> {
        let w = self.omega_prime(body, axis)?;
        Ok((0.5 * HBAR * self.masses[body] * w).sqrt())
    }

    /// Coupling rate `V̄_kl R_k R_l / ħ` between two coordinates.
    pub fn coupling(&self, a: (usize, Axis), b: (usize, Axis)) -> Result<f64, LinearError> {
        let v = self.potential[(coord(a.0, a.1), coord(b.0, b.1))];
        Ok(v * self.r_zpf(a.0, a.1)? * self.r_zpf(b.0, b.1)? / HBAR)
    }

    /// Axis on which every body sits, if any.
    pub fn on_axis(&self) -> Option<Axis> {
        crate::equilibrium::classify_layout(&self.positions)
    }

    /// Groups of coordinates that are coupled by `V̄`.
    pub fn coupling_blocks(&self) -> Vec<Vec<usize>> {
        coupling_blocks(&self.potential)
    }
}

/// Connected components of the off-diagonal structure of a symmetric matrix.
pub fn coupling_blocks(v: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = v.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut i = i;
        while p[i] != r {
            let next = p[i];
            p[i] = r;
            i = next;
        }
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = (v[(i, i)].abs() * v[(j, j)].abs()).sqrt();
            if v[(i, j)].abs() > 1e-12 * scale {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut root_of: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        match root_of[r] {
            Some(k) => blocks[k].push(i),
            None => {
                root_of[r] = Some(blocks.len());
                blocks.push(vec![i]);
            }
        }
    }
    blocks
}

pub fn build_linearized_system(
    config: &EquilibriumConfiguration,
    spec: &SystemSpec,
) -> Result<LinearizedSystem, LinearError> {
    if !(config.residual_norm < ROOT_ACCEPT) {
        return Err(LinearError::NotConverged(config.residual_norm));
    }
    LinearizedSystem::from_positions(&config.positions(), spec)
}

pub fn renormalized_frequencies(system: &LinearizedSystem) -> Result<Vec<[f64; 3]>, LinearError> {
    (0..system.n_bodies())
        .map(|b| {
            Ok([
                system.omega_prime(b, Axis::X)?,
                system.omega_prime(b, Axis::Y)?,
                system.omega_prime(b, Axis::Z)?,
            ])
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingRates {
    /// Two-body rates `g_x, g_y, g_z` (rad/s).
    pub two_body: Option<[f64; 3]>,
    /// Ion normal modes along z for `N > 1`.
    pub modes: Option<NormalModes>,
}

/// Per-axis two-body coupling rates for a single ion on a trap axis.
pub fn two_body_couplings(system: &LinearizedSystem) -> Result<[f64; 3], LinearError> {
    if system.n_ions != 1 || system.on_axis().is_none() {
        return Err(LinearError::OffAxisLayout);
    }
    let p = system.particle();
    let mut g = [0.0; 3];
    for axis in Axis::ALL {
        g[axis.index()] = system.coupling((0, axis), (p, axis))?;
    }
    Ok(g)
}

pub fn coupling_rates(system: &LinearizedSystem) -> Result<CouplingRates, LinearError> {
    if system.n_ions == 1 {
        Ok(CouplingRates {
            two_body: Some(two_body_couplings(system)?),
            modes: None,
        })
    } else {
        Ok(CouplingRates {
            two_body: None,
            modes: Some(normal_modes(system)?),
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub stable: bool,
    /// Eigenvalues of the mass-weighted potential `M̄^½ V̄ M̄^½`, ascending (s⁻²).
    pub squared_frequencies: Vec<f64>,
    /// Eigenvalues of the dynamical matrix, `±sqrt(-λ)` per squared frequency.
    #[serde(skip)]
    pub eigenvalues: Vec<Complex<f64>>,
}

/// Eigenvalues below this fraction of the largest one count as zero modes.
const ZERO_MODE_TOL: f64 = 1e-14;

pub fn dynamical_stability(system: &LinearizedSystem) -> StabilityReport {
    let n = system.dim();
    let s: Vec<f64> = system.inverse_mass.iter().map(|m| m.sqrt()).collect();
    let w = DMatrix::from_fn(n, n, |i, j| s[i] * system.potential[(i, j)] * s[j]);
    let w = (&w + w.transpose()) * 0.5;
    let mut lambda: Vec<f64> = w.symmetric_eigenvalues().iter().copied().collect();
    lambda.sort_by(|a, b| a.total_cmp(b));
    let scale = lambda.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let stable = n > 0 && lambda[0] > ZERO_MODE_TOL * scale;
    let eigenvalues = lambda
        .iter()
        .flat_map(|&l| {
            let z = if l >= 0.0 {
                Complex::new(0.0, l.sqrt())
            } else {
                Complex::new((-l).sqrt(), 0.0)
            };
            [z, -z]
        })
        .collect();
    StabilityReport {
        stable,
        squared_frequencies: lambda,
        eigenvalues,
    }
}

/// Normal modes of the ion chain along z.
#[derive(Clone, Debug, Serialize)]
pub struct NormalModes {
    /// Row `α` holds the participation of each ion in mode `α`.
    #[serde(serialize_with = "serialize_rows")]
    pub s: DMatrix<f64>,
    /// Mode frequencies ν_α (rad/s), ascending.
    pub nu: Vec<f64>,
    /// Mode to nanoparticle coupling rates g_α (rad/s).
    pub g: Vec<f64>,
    /// Renormalized nanoparticle frequency Ω'_zp used for the rates (rad/s).
    pub omega_particle: f64,
    /// True when the two lowest modes coincide to 1e-6.
    pub degenerate_pair: bool,
}

fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl NormalModes {
    /// Squared coupling entering the multi-ion cooling rate: `g₁²` for an
    /// even number of ions and `g₁² + g₂²` for an odd number.
    pub fn com_coupling_squared(&self) -> f64 {
        let n = self.g.len();
        if n % 2 == 1 && n > 1 {
            self.g[0] * self.g[0] + self.g[1] * self.g[1]
        } else {
            self.g[0] * self.g[0]
        }
    }
}

pub fn normal_modes(system: &LinearizedSystem) -> Result<NormalModes, LinearError> {
    let n = system.n_ions;
    let p = system.particle();
    let mi = system.masses[0];
    let mp = system.masses[p];
    let idx: Vec<usize> = (0..n).map(|k| coord(k, Axis::Z)).collect();
    let block = DMatrix::from_fn(n, n, |a, b| system.potential[(idx[a], idx[b])] / mi);
    let eig = SymmetricEigen::new((&block + block.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(LinearError::NotPositiveDefinite);
    }
    let omega_p = system.omega_prime(p, Axis::Z)?;
    let mut s = DMatrix::zeros(n, n);
    let mut nu = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let pz = coord(p, Axis::Z);
    for (row, &m) in order.iter().enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(m).iter().copied().collect();
        let sum: f64 = v.iter().sum();
        let pivot = if sum.abs() > 1e-12 {
            sum
        } else {
            *v.iter().find(|x| x.abs() > 1e-12).unwrap_or(&1.0)
        };
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let w = eig.eigenvalues[m].sqrt();
        let proj: f64 = (0..n).map(|k| v[k] * system.potential[(idx[k], pz)]).sum();
        g.push(0.5 * proj / (mi * mp * omega_p * w).sqrt());
        nu.push(w);
        for k in 0..n {
            s[(row, k)] = v[k];
        }
    }
    let degenerate_pair = n > 1 && (nu[1] - nu[0]).abs() < 1e-6 * nu[0];
    Ok(NormalModes {
        s,
        nu,
        g,
        omega_particle: omega_p,
        degenerate_pair,
    })
}
