//! Worker-pool plumbing. Every parallel reduction in this crate collects
//! per-unit results in index order and folds them sequentially, so results
//! do not depend on the number of workers.

use crate::error::{Error, Result};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "HYK_THREADS";

/// Worker count from `HYK_THREADS`, if set and valid.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Run `f` inside a dedicated pool of `workers` threads.
pub fn with_workers<T: Send, F: FnOnce() -> T + Send>(workers: usize, f: F) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Resource(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}
