//! IO, file formats, training loop and command-line tooling around
//! [`rmsflow_core`].

pub mod ablate;
pub mod alloc_count;
pub mod bench;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod format;
pub mod parallel;
pub mod seeds;
pub mod trainer;

pub use rmsflow_core as core;
