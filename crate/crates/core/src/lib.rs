//! Calibrated model chains with multi-level abstention.
//!
//! A chain tries cheap models first. Each member calibrates its raw
//! confidence with a Platt scaler on a nonlinear transform and then rejects
//! (abstains), delegates to the next member, or accepts its own answer.
//! The crate covers data records, calibration, chain simulation, exhaustive
//! Pareto frontier search over chain thresholds, and a live HTTP router.

pub mod calibration;
pub mod chain;
pub mod cli;
pub mod config;
pub mod error;
pub mod frontier;
pub mod math;
pub mod records;
pub mod router;
pub mod transforms;

pub use error::{Error, Result};
