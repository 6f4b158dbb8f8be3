//! Physics-informed regression of muscle forces and joint angle from
//! surface-EMG envelopes.

pub mod baselines;
pub mod datasets;
pub mod error;
pub mod metrics;
pub mod network;
pub mod physics;
pub mod simulator;

pub use error::{Error, Result};
