//! Configuration, dispatch and bit-exact output for the `brwre` binary.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, ConfigError, ConfigErrors, ExperimentId, Overrides, RunConfig};
pub use run::{execute, invoke, Invocation};
