//! Operator commands for the records service: seeding the department
//! structure, managing accounts and taking or restoring backups.

pub mod client;
pub mod commands;
pub mod config;
pub mod error;
pub mod seed;

pub use commands::{run, Cli, Report};
pub use error::{CliError, EXIT_CODES};
