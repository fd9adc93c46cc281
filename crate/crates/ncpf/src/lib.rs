//! Command-line driver and file formats for NCPF tensor completion.
//!
//! The numerics live in [`ncpf_core`]; this crate adds COO files, JSON
//! checkpoints and reports, CSV tables, the flat key-value run
//! configuration and the `ncpf` binary's subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod report;
pub mod run;

pub use error::{Error, Result};

pub const NAME: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
