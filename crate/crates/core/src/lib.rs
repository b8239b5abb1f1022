//! Online estimation of quadrotor motor efficiency.
//!
//! Each estimate minimizes one-step trajectory residuals over a sliding window
//! of measured transitions. The box-constrained weighted least-squares problem
//! is solved by a primal-dual interior-point method wrapped in an iteratively
//! reweighted loop that scores segments with MAD-based robust z-scores.
//!
//! The crate also carries everything needed to exercise the estimator: a
//! rigid-body quadrotor simulator with per-motor efficiency injection, a
//! geometric tracking controller, a declarative scenario engine and a 22-state
//! EKF baseline.

pub mod controller;
pub mod dynamics;
pub mod ekf;
pub mod error;
pub mod io;
pub mod ipm;
pub mod irls;
pub mod residuals;
pub mod scenario;
pub mod se3;
pub mod weights;

pub use error::{Error, Result};
