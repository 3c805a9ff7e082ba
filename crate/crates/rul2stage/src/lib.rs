//! Two-stage early remaining-useful-life (RUL) prediction for lithium-ion
//! battery fleets.
//!
//! Stage 1 learns a health-state classifier from automatically labeled
//! sliding windows and locates each cell's First Prediction Cycle (FPC) with
//! a consecutive-unhealthy trigger; stage 2 learns a regressor mapping
//! post-FPC windows to the remaining life expressed as a fraction of the
//! FPC-to-EOL span. The crate ships its own small, fully deterministic
//! LSTM training engine, a synthetic fleet generator for desk-scale work,
//! and the matching evaluation protocol.
//!
//! Module map:
//! - [`dataio`]: cell CSV format, validation, normalization, fleet splits.
//! - [`synthgen`]: synthetic degradation trajectories and fleets.
//! - [`windows`]: sliding windows, health-state labels, RUL targets.
//! - [`nn`]: LSTM stacks, losses, Adam, training loop, checkpoints.
//! - [`fpc`]: stage 1 — classifier training and FPC location.
//! - [`rulpred`]: stage 2 — RUL-fraction regression and curve prediction.
//! - [`eval`]: metrics, fleet evaluation, baseline forecaster, reports.
//! - [`cli`]: configuration and the command implementations behind the
//!   `rul2stage` binary.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod fpc;
pub mod nn;
pub mod rulpred;
pub mod synthgen;
pub mod windows;

pub use error::{Error, Result};
