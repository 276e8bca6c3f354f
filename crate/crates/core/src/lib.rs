//! Optimal adaptive testing policies for SIR-type epidemics.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numerical piece:
//!
//! - [`model`]: deterministic dynamics with molecular, symptomatic and serology
//!   detection, a fixed-step RK4 integrator with event location, and the
//!   constant-rate orbit relations in [`orbit`].
//! - [`policy`]: the threshold-riding optimal policy, the switching schedule for
//!   the total-infected constraint with a capped rate, and the minimum constant
//!   rate baseline.
//! - [`stochastic`]: exact Gillespie simulation of the counting process and the
//!   diffusion matrix of its system-size expansion.
//! - [`estimator`]: a state-constrained extended Kalman filter and windowed
//!   transmission-rate regression.
//! - [`controller`]: the receding-horizon policy and the full closed loop.
//! - [`observability`]: numerical demonstrations of (non-)identifiability from
//!   molecular-only and serology data.
//!
//! File formats, the CLI and parallel ensembles live in the `adaptest` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod controller;
pub mod error;
pub mod estimator;
pub mod golden;
pub mod orbit;
mod math;
pub mod model;
pub mod newton;
pub mod observability;
pub mod params;
pub mod policy;
pub mod quadrature;
pub mod stochastic;

pub use error::Error;
pub use model::{BetaSignal, FractionState, Trajectory};
pub use params::Params;

pub type Result<T> = core::result::Result<T, Error>;
