//! Campaign runner, file formats and command-line front end for the
//! `tmrfi-core` simulator.
//!
//! Experiments are described by a single JSON [`config::RunConfig`]. The
//! [`runner`] fans shots out over a rayon pool with results independent of
//! the worker count, [`formats`] writes the CSV, JSON and markdown outputs,
//! and [`cli`] wires it all to the `tmrfi` binary.

pub mod cli;
pub mod config;
mod error;
pub mod formats;
pub mod runner;

pub use error::AppError;
pub use tmrfi_core as core;
