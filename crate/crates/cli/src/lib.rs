//! Command implementations behind the `latentflow` binary.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{Failure, Result};
