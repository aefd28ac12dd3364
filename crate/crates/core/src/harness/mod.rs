//! Experiment runner: configuration, commands, sweeps and reports.

mod commands;
mod config;
mod data;
pub mod fixtures;
mod report;
mod sweeps;

pub use commands::*;
pub use config::*;
pub use data::*;
pub use report::*;
pub use sweeps::*;
