//! Fan-out of independent work units.
//!
//! Results are collected in unit order and every unit carries its own
//! random stream, so output does not depend on the thread count. The
//! `BARTLAB_THREADS` environment variable caps the worker pool.

use std::sync::OnceLock;

use rayon::prelude::*;
use rayon::ThreadPool;

pub const THREADS_ENV: &str = "BARTLAB_THREADS";

fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            b = b.num_threads(n.max(1));
        }
        b.build().expect("thread pool")
    })
}

/// Worker count in use.
pub fn threads() -> usize {
    pool().current_num_threads()
}

/// `(0..n).map(f)` evaluated on the shared pool.
pub fn map_units<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    pool().install(|| (0..n).into_par_iter().map(&f).collect())
}

/// Like [`map_units`] but stops at the first error (by unit order).
pub fn try_map_units<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_units(n, f).into_iter().collect()
}
