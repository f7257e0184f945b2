//! Decentralized SGD over doubly-stochastic gossip matrices, together with
//! the instance generators, ensemble statistics and bound checkers used to
//! study its high-probability behaviour.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! files, threads or the command line lives in the `dsgd-lab` companion crate.
//!
//! Module map:
//!
//! * [`topology`]: communication graphs, Metropolis mixing matrices, spectral gap.
//! * [`objectives`]: local cost families with certified constants.
//! * [`noise`]: calibrated sub-Gaussian gradient noise and MGF estimators.
//! * [`engine`]: the adapt-then-combine update, step-size schedules, runs.
//! * [`analysis`]: quantiles, tail curves and rate fits over ensembles.
//! * [`validation`]: pointwise and Monte-Carlo checks of the supporting inequalities.
#![no_std]
// `!(x < y)` keeps NaN on the failing side of every parameter check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod engine;
mod error;
pub mod exec;
pub(crate) mod linalg;
pub mod noise;
pub mod objectives;
pub mod rng;
pub mod topology;
pub mod validation;

pub use error::{Error, Result};
