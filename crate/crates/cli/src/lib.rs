//! File formats, configuration, synthetic instances and run orchestration
//! behind the `delgfn` command.

pub mod config;
pub mod error;
pub mod formats;
pub mod run;
pub mod synth;

pub use config::{Method, RunConfig};
pub use error::{CliError, CliResult};
