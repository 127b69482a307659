//! Simulation core for laser fault injection against triple-modular-redundant
//! shift registers.
//!
//! The crate is `no_std` (it needs `alloc`). It holds the register layout
//! model, the edge-accurate TMR engine, the optical fault model, the campaign
//! logic (classification, repeatability, threshold calibration) and a
//! brute-force waveform oracle used for differential testing of the engine.
//! IO, configuration files and the command-line front end live in the
//! companion `tmrfi` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod campaign;
pub mod engine;
mod error;
pub mod layout;
pub mod optics;
pub mod oracle;
mod rng;
mod time;

pub use error::{Error, Result};
pub use time::{Femtos, FS_PER_NS};
