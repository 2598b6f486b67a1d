//! Pipeline commands behind the `kdsm` binary.

pub mod commands;
pub mod compare;
pub mod config;

pub use compare::{compare, ComparisonReport};
pub use config::{Method, RunConfig};
