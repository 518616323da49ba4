//! Data-parallel helpers. With the `parallel` feature these fan out over a
//! rayon pool; without it they run the same closures sequentially. Results
//! are always returned in index order, so callers get identical output
//! either way.

use std::ops::Range;

/// Pulses handled by one work item.
pub const DEFAULT_CHUNK: u64 = 1 << 15;

/// Splits `0..n` into contiguous chunks and maps each one.
pub fn map_chunks<T, F>(n: u64, chunk: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let range_of = |c: u64| c * chunk..((c + 1) * chunk).min(n);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_chunks).into_par_iter().map(|c| f(range_of(c))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks).map(|c| f(range_of(c))).collect()
    }
}

/// Maps every element of `items`, preserving order.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Folds contiguous chunks of `items` into per-worker accumulators and
/// combines them. `reduce` must be commutative and associative for the
/// result to be independent of scheduling.
pub fn fold_chunks<I, A, N, F, R>(items: &[I], chunk: usize, init: N, fold: F, reduce: R) -> A
where
    I: Sync,
    A: Send,
    N: Fn() -> A + Sync + Send,
    F: Fn(A, &[I]) -> A + Sync + Send,
    R: Fn(A, A) -> A + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_chunks(chunk).fold(&init, &fold).reduce(&init, &reduce)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = &reduce;
        items.chunks(chunk).fold(init(), fold)
    }
}

/// Runs `f` with at most `workers` threads. `None` uses the global pool.
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = workers {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

/// Number of threads the current context would use.
pub fn current_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
