//! Numerical building blocks shared by the physics modules.

pub mod dd;
pub mod lyapunov;
pub mod ode;
