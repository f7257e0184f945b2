//! Experiment orchestration on top of `dsgd-core`: TOML configs, parallel
//! ensembles, sweeps, lemma suites and artifact writers.

pub mod config;
pub mod dump;
pub mod ensemble;
mod error;
pub mod instance;
pub mod output;
pub mod pool;
pub mod suites;
pub mod sweep;

pub use error::{LabError, Result};
