//! Solvers for continuous-time life-cycle and overlapping-generations
//! consumption-savings economies with idiosyncratic income risk.
//!
//! The optimal consumption of a household is characterised by a
//! forward-backward system: wealth runs forward, while consumption depends on
//! the conditional expectation of terminal marginal utility. The
//! [`lifecycle`] module solves that system by Picard iteration with
//! least-squares Monte Carlo conditional expectations, [`deterministic`]
//! provides the closed-form noiseless benchmark, and [`equilibrium`] computes
//! market-clearing interest rates for a single generation and for
//! overlapping generations.

pub mod deterministic;
pub mod equilibrium;
pub mod error;
pub mod lifecycle;
pub mod model;
pub mod stats;

pub use error::{Error, Result};
