//! Deterministic data-parallel reductions.
//!
//! Work is split into fixed-size chunks; partial results are merged in chunk
//! order. The chunk layout does not depend on the thread count, so parallel and
//! sequential execution produce bitwise-identical sums.

use serde::{Deserialize, Serialize};

/// Samples per reduction chunk.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise sequential.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps each chunk `[start, end)` of `0..len` to a partial result and folds the
/// partials left to right with `merge`.
pub fn chunked_reduce<T, F, M>(exec: Execution, len: usize, map: F, merge: M) -> Option<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
    M: Fn(T, T) -> T,
{
    let chunks = len.div_ceil(CHUNK);
    let bounds = move |c: usize| (c * CHUNK, ((c + 1) * CHUNK).min(len));
    let partials: Vec<T> = if exec.is_parallel() && chunks > 1 {
        par_map(chunks, |c| {
            let (s, e) = bounds(c);
            map(s, e)
        })
    } else {
        (0..chunks)
            .map(|c| {
                let (s, e) = bounds(c);
                map(s, e)
            })
            .collect()
    };
    partials.into_iter().reduce(merge)
}

/// Ordered map over `0..n`; output index `i` holds `f(i)`.
#[cfg(feature = "parallel")]
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` inside a pool of `workers` threads (or inline without the feature).
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a {workers}-thread pool ({e}); using the global pool");
            f()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Ordered map that runs in parallel only when `exec` asks for it.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if exec.is_parallel() {
        par_map(n, f)
    } else {
        (0..n).map(f).collect()
    }
}
