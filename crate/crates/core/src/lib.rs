//! Discretized delay action functionals on the free loop space of R^2n.
//!
//! Loops are sampled on a uniform periodic grid, differentiated spectrally,
//! and fed to four families of delay functionals whose critical points are
//! 1-periodic solutions of Hamiltonian delay equations. A damped least-squares
//! solver finds residual zeros; a Lotka-Volterra module carries the reduction
//! of one such system to a first-order delay equation in the populations.

pub mod cli;
pub mod error;
pub mod functionals;
pub mod loop_space;
pub mod lotka_volterra;
pub mod solvers;
pub mod symplectic;

pub use error::{Error, Result};
pub use functionals::{DelayFunctional, FunctionalConfig, ResidualSystem, TauSpec};
pub use loop_space::{DelayShift, Loop, LoopRole, LoopTangent};
pub use lotka_volterra::{LVModel, LvConfig};
pub use solvers::{OrbitResult, SolverConfig};
pub use symplectic::{HamiltonianField, TimeDelayFamily, TwoInputHamiltonian};
