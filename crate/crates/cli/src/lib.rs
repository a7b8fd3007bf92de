//! File formats and subcommands of the `helios` command-line tool.
//!
//! The engine itself lives in [`helios_core`]; this crate reads and writes
//! workflow, input, profile and cache files and turns runs into JSON and
//! CSV reports.

pub mod args;
pub mod command;
pub mod format;

pub use args::{Cli, Command};
