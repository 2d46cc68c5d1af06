//! Numerical library for kinetic Kolmogorov-Fokker-Planck operators
//! `L = sigma*Laplace_v + Y + F(t,z).grad_v` with unbounded, locally
//! Hoelder drift `F`.
//!
//! The crate builds the fundamental solution of `L` by the Levy parametrix
//! method on top of the explicit constant-coefficient kinetic Gaussian,
//! simulates the dual kinetic Langevin SDE
//! `dX = V dt, dV = F dt + sqrt(2 sigma) dB` with cutoff localization for
//! unbounded drift, and cross-checks the PDE and SDE sides against each
//! other: Chapman-Kolmogorov, Gaussian sandwich bounds, Neumann-series
//! convergence diagnostics, weak-solution residuals and duality identities.
//!
//! Modules follow the math:
//! - [`lie_group`]: the non-Euclidean calculus (group law, dilations,
//!   homogeneous norms, Lie derivative `Y`).
//! - [`gaussian_kernel`]: the explicit kernel of `lambda*Laplace_v + Y`.
//! - [`drift_fields`]: the drift abstraction with growth/Hoelder validators.
//! - [`parametrix`]: the Neumann-series construction of the heat kernel,
//!   with the explicit bound functions used as convergence diagnostics.
//! - [`backward_solver`]: representation formula for the terminal-value
//!   problem and strong-Lie residual checks.
//! - [`langevin_sim`]: Euler-Maruyama paths, cutoff ladder, stopping times,
//!   empirical flows, moment and weak-solution checks.
//! - [`measure_tools`]: Wasserstein-1 estimators and narrow-convergence
//!   checks.
//! - [`mollifier`]: anisotropic group-convolution mollifiers and the
//!   associated commutation/derivative-bound checks.
//! - [`verify`]: the batch verification suite driven by the CLI.

pub mod backward_solver;
pub mod drift_fields;
pub mod error;
pub mod gaussian_kernel;
pub mod langevin_sim;
pub mod lie_group;
pub(crate) mod mat2;
pub mod test_functions;
pub mod measure_tools;
pub mod mollifier;
pub mod parametrix;
pub mod quadrature;
pub mod rngs;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use lie_group::{PhasePoint, SpaceTimePoint};
