//! Rayon-backed [`Executor`].

use std::time::Instant;

use mbgl_core::dc::FitObserver;
use mbgl_core::Executor;
use rayon::prelude::*;

use crate::error::CliError;

/// Env var consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "MBGL_THREADS";

pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `None` or `Some(0)` lets rayon pick the worker count.
    pub fn new(threads: Option<usize>) -> Result<Self, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.unwrap_or(0))
            .build()
            .map_err(|e| CliError::validation(format!("cannot start thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        // Indexed collect keeps job order regardless of scheduling.
        self.pool
            .install(|| (0..n).into_par_iter().map(f).collect())
    }
}

/// Wall clock for fit reports, with optional per-iteration lines on stderr.
pub struct Progress {
    start: Instant,
    verbose: bool,
}

impl Progress {
    pub fn new(verbose: bool) -> Self {
        Self {
            start: Instant::now(),
            verbose,
        }
    }
}

impl FitObserver for Progress {
    fn on_iteration(&mut self, iteration: usize, objective: f64, relative_change: f64) {
        if self.verbose {
            eprintln!("dc iteration {iteration}: objective {objective} change {relative_change:e}");
        }
    }

    fn elapsed_seconds(&self) -> Option<f64> {
        Some(self.start.elapsed().as_secs_f64())
    }
}
