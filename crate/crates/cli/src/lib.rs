//! Command-line plumbing and the HTTP steering service.

pub mod artifacts;
pub mod error;
pub mod service;

pub use artifacts::{ModelSet, TrainConfig};
pub use error::{CliError, CliResult};
