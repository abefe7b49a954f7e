//! Simulation and optimization toolkit for fluid-antenna port selection in
//! integrated sensing and communication scenarios.
//!
//! The pipeline synthesizes correlated port-domain channels and sensing
//! snapshots, generates expert masks by randomized search, trains a
//! conditional denoising diffusion model over port logits, and samples
//! masks with energy guidance for two objectives: hiding a node from a
//! matched-filter receiver (stealth) and nulling its leakage into a
//! target's guard bins (cooperative shaping).

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod control;
pub mod diffusion;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod expert;
pub mod numerics;
pub mod scenario;
pub mod sensing;

pub use error::{Error, Result};
