//! Order-preserving data-parallel helpers. With the `parallel` feature off
//! everything runs on the calling thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, returning results in input order.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Runs `f` with at most `jobs` worker threads (0 = library default).
#[cfg(feature = "parallel")]
pub fn with_jobs<R, F>(jobs: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_jobs<R, F>(_jobs: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    f()
}

pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
