//! Execution strategy for embarrassingly parallel run loops.
//!
//! Runs are identified by their index; an executor only decides where each
//! index is evaluated, and must return the results in index order.

use alloc::vec::Vec;

pub trait Executor {
    fn map_indexed<T, F>(&self, count: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send;
}

/// Evaluates every index on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_indexed<T, F>(&self, count: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        (0..count).map(f).collect()
    }
}
