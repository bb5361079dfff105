//! Path-level execution: a rayon pool when the `parallel` feature is on and
//! more than one worker is requested, a plain loop otherwise.
//!
//! Results always come back in index order, and every reduction downstream
//! runs sequentially over that order, so output is identical for any worker
//! count.

use std::fmt;
#[cfg(feature = "parallel")]
use std::sync::Arc;

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "HYPOCOERCE_WORKERS";

#[derive(Clone)]
pub struct Exec {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl fmt::Debug for Exec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Exec").field("workers", &self.workers).finish()
    }
}

impl Default for Exec {
    fn default() -> Self {
        Exec::from_env()
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Exec {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// `workers` threads (clamped to at least one).
    pub fn with_workers(workers: usize) -> Self {
        let workers = workers.max(1);
        #[cfg(feature = "parallel")]
        {
            if workers > 1 {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                    return Exec { workers, pool: Some(Arc::new(pool)) };
                }
            }
            Exec { workers: 1, pool: None }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Exec::sequential()
        }
    }

    /// Reads [`WORKERS_ENV`], defaulting to the available cores.
    pub fn from_env() -> Self {
        let n = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Exec::with_workers(n)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// `[f(0), f(1), …, f(n−1)]`.
    pub fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().with_min_len(16).map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}
