//! Motional dynamics of a charged nanoparticle co-trapped with ions in a
//! two-tone linear Paul trap.
//!
//! The crate is organised bottom-up:
//!
//! * [`trap_model`]: per-axis Mathieu parameters, secular frequencies,
//!   displacement functions and validity diagnostics.
//! * [`equilibrium`]: Coulomb energy, force residual and multi-start
//!   equilibrium search for one nanoparticle and `N` ions.
//! * [`linear_system`]: linearized Hamiltonian, renormalized frequencies,
//!   coupling rates, dynamical stability and ion normal modes.
//! * [`cooling`]: dissipation rates, ladder drift/diffusion matrices and
//!   steady-state occupations from the Lyapunov equation.
//! * [`floquet`]: micromotion-resolved dynamics, monodromy matrices,
//!   Floquet stability and time-averaged purity.
//! * [`config`], [`runner`], [`report`]: scenario files, sweeps and output.
//!
//! Units are SI throughout with angular frequencies in rad/s. Configuration
//! files and CSV outputs use plain Hz.

pub mod config;
pub mod constants;
pub mod cooling;
pub mod diagnostics;
pub mod equilibrium;
pub mod floquet;
pub mod linear_system;
pub mod numeric;
pub mod reference;
pub mod report;
pub mod runner;
pub mod trap_model;

pub use diagnostics::Warning;
pub use trap_model::{Axis, ParticleSpec, TrapConfiguration};
