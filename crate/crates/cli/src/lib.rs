//! Command line and HTTP front end for `canine-core`.
//!
//! Exit codes: 0 success, 1 input error, 2 configuration error, 3 runtime
//! or numeric failure.

pub mod commands;
pub mod error;
pub mod server;

pub use error::{CliError, CliResult, Kind};
