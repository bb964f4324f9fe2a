//! Experiment driver: declarative configs, single-step commands and the
//! base / EV / TL / limited-data suite.

mod commands;
mod config;
mod suite;

pub use commands::*;
pub use config::*;
pub use suite::*;
