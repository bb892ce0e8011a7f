//! Frequency-domain design of a full-duplex filter-and-forward relay.
//!
//! The relay filters what it hears, including its own loop-back signal, and
//! forwards it. [`dual_solver::ellipsoid_minimize`] finds the source PSD and
//! relay response maximizing the achievable rate under average power budgets
//! at source and relay. [`baselines`] holds the reference schemes,
//! [`timesim`] a sample-level simulator of the feedback loop, and
//! [`harness`] the Monte-Carlo sweeps.

pub mod baselines;
pub mod channel;
pub mod config;
pub mod dual_solver;
pub mod error;
pub mod harness;
pub mod relay_model;
pub mod subproblem;
pub mod timesim;

pub use error::{Error, Result};
