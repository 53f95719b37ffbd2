//! Numerical laboratory for the two-dimensional Coulomb gas with a general
//! confinement potential.
//!
//! The crate is organised around the pipeline used by the experiments:
//!
//! * [`model`]: confinement potentials, gas parameters and configurations.
//! * [`equilibrium`]: the equilibrium measure obtained from the obstacle
//!   problem, harmonic extensions and the multi-cut flux check.
//! * [`energy`]: Hamiltonian, continuous energy, next-order energy and the
//!   splitting identity.
//! * [`sampler`]: Gibbs sampling by MCMC, exact Ginibre eigenvalues for
//!   `beta = 2`, and chain diagnostics.
//! * [`field`]: the potential field of a configuration, its mollified
//!   regularisations, disk maxima and normalised exponential measures.
//! * [`fluctuations`]: linear statistics, exponential moments and the
//!   transport construction with its diagnostics.
//! * [`lab`]: configuration files, experiment drivers and persistence.

pub mod energy;
pub mod equilibrium;
pub mod error;
pub mod field;
pub mod fluctuations;
pub mod geometry;
pub mod grid;
pub mod lab;
pub mod model;
pub mod numerics;
pub mod sampler;

pub use error::{LabError, Result};
pub use geometry::Point;
