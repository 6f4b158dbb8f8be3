//! Experiment front-end over `msk-core`: configuration, the shared run
//! harness, and the subcommands behind the `msk-pinn` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod stats;
pub mod svg;

pub use error::{CliError, Result};
