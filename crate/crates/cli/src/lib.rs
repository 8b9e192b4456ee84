//! Scenario runner for the log-concavity toolkit.
//!
//! The library side of the `prekopa` binary: scenario schema and loading
//! ([`scenario`]), check execution ([`runner`]), and report formatting
//! ([`emit`]). The binary adds argument parsing and exit-code policy: 0 when
//! every check passes, 1 when any check fails or is inconclusive, 2 when the
//! input cannot be run at all.

pub mod emit;
pub mod error;
pub mod runner;
pub mod scenario;

pub use error::CliError;
