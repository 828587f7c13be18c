//! Simulation and inference toolkit for optically-pumped spin-precession
//! magnetometers operated in free-induction-decay mode.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: physical parameters, derived constants and the exact
//!   discrete-time matrices of the linear spin subsystem.
//! - [`sde_sim`]: ground-truth trajectories and synthetic photocurrent
//!   records (Itô-Taylor 1.5, Euler-Maruyama and exact spin propagation).
//! - [`filters`]: extended and cubature Kalman filters over the 3-state
//!   `[ω, J_y, J_z]`.
//! - [`pem`]: Kalman-innovation likelihood of a constant Larmor frequency
//!   and its MAP estimate.
//! - [`bounds`]: Monte-Carlo Bayesian Cramér-Rao bound and the analytic
//!   noiseless Fisher-information expressions.
//! - [`atoms`]: atom-number estimation from steady-state fluctuations.
//! - [`harness`]: Monte-Carlo experiments, CSV/JSON output and the `spm` CLI.

pub mod atoms;
pub mod bounds;
pub mod error;
pub mod filters;
pub mod harness;
pub mod model;
pub mod pem;
pub mod rng;
pub mod sde_sim;
pub mod stats;

pub use error::{Error, Result};
pub use model::{GaussianPrior, SignalModel, SpmParams};
pub use sde_sim::{ExtendedState, MeasurementRecord, Trajectory};
