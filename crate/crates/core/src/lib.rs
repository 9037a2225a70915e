//! Control synthesis and closed-loop simulation for an under-actuated
//! three-wheel in-pipe robot.
//!
//! The robot's attitude (`phi`, `psi`) is held level by an LQR state-feedback
//! gain while per-wheel PID loops track a desired axial velocity. The crate
//! provides the nonlinear plant, linear design models, a Riccati solver,
//! the combined controller, a fixed-step simulator and the CLI plumbing
//! (TOML configs, CSV telemetry, sweeps, validation).

pub mod config;
pub mod controller;
pub mod error;
pub mod linmodel;
pub mod pid;
pub mod plant;
pub mod riccati;
pub mod sim;
pub mod sweep;
pub mod telemetry;
pub mod validation;

pub use error::{Error, Result};
