//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) the batch entry points fan out
//! over rayon's pool; without it every [`Parallelism`] value runs on the
//! calling thread. Results are always returned in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch operation distributes its independent work items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// `jobs <= 1` maps to sequential execution.
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        }
    }

    /// Whether this build can actually run work in parallel.
    pub fn available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map`] but short-circuits on the first error (in input order for the
/// sequential path; any failing item for the parallel path).
pub fn try_map<T, R, E, F>(items: &[T], mode: Parallelism, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Runs `f` inside a pool limited to `jobs` threads when `jobs > 1`.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}
