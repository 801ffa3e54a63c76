//! Exact and asymptotic distributions of explosive pure birth processes and
//! Monte Carlo simulation of generalized Pólya urns via the exponential
//! embedding.
//!
//! The crate is organized around:
//! - [`rates`]: feedback functions and their reciprocal series,
//! - [`density`]: hypoexponential and explosion-time distributions,
//! - [`asymptotics`]: closed-form tail predictions and constants,
//! - [`sim`]: a deterministic, parallel Monte Carlo engine,
//! - [`analytics`]: empirical tails, exponent fits and comparisons,
//! - [`experiments`]: named, config-driven reproduction runs.

#![forbid(unsafe_code)]

pub mod analytics;
pub mod asymptotics;
pub mod density;
pub mod error;
pub mod experiments;
mod numeric;
pub mod rates;
pub mod sim;

pub use error::{Error, Result};
pub use numeric::fmt_sig12;
