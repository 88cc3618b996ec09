//! Parabolic p-Laplace evolutions on box grids.
//!
//! The crate discretizes `du/dt - div(|grad u|^{p-2} grad u) = f` with
//! Dirichlet or Neumann boundary conditions for every exponent `p >= 1`,
//! including the total variation flow at `p = 1`, and provides experiments
//! that measure how solutions depend on `p`, the initial datum and the forcing.
//!
//! * [`geometry`]: grids, fields, and the gradient/divergence pair.
//! * [`energy`]: the discrete energies and their gradients for `p > 1`.
//! * [`prox`]: the resolvent of the energy by a primal-dual iteration.
//! * [`flow`]: backward-Euler trajectories.
//! * [`experiments`]: continuity runs, lower-limit and recovery probes, and
//!   diagonal selection on doubly indexed tables.
//! * [`cli`]: config parsing and the command-line driver.

pub mod cli;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod geometry;
pub mod prox;

pub use energy::{energy, energy_limit_gap, subgradient, EnergySpec};
pub use error::{Error, Result};
pub use flow::{evolve, sup_distance, Forcing, TimeGrid, Trajectory};
pub use geometry::{div, grad, l2_inner, BoundaryCondition, FaceField, Field, Grid};
pub use prox::{pd_gap, prox_power_magnitude, resolvent, PdSteps, ProxParams, ProxReport, Resolvent};
