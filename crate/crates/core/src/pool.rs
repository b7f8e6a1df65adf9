use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "DEEP_EPROP_THREADS";

/// Worker pool honouring `DEEP_EPROP_THREADS` (unset or 0 means rayon's default).
pub fn worker_pool() -> Result<ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::Argument(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))
        })?,
        Err(_) => 0,
    };
    ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}
