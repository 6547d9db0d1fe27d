//! Pluggable fan-out for embarrassingly parallel work.

use alloc::vec::Vec;

/// Runs `n` independent jobs and returns their results in job order.
///
/// Implementations may run jobs concurrently, but the returned vector must be
/// ordered by job index so downstream reductions stay deterministic.
pub trait Executor: Sync {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
