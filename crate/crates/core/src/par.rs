//! Index-parallel map with a sequential fallback.
//!
//! Every helper returns results in index order, so any reduction performed
//! over the returned vector is identical whether or not the `parallel`
//! feature is enabled and regardless of the rayon pool size.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluates `f(0..n)` and collects the results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Maps over a slice, preserving order.
#[cfg(feature = "parallel")]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Ordered sum of `f(i)` over `0..n`. The summation order is fixed, so the
/// result is bit-identical between the parallel and sequential builds.
pub fn ordered_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_indexed(n, f).into_iter().sum()
}

/// Runs `f` on a single-threaded pool. Used by the benches to compare the
/// two execution modes inside one binary.
#[cfg(feature = "parallel")]
pub fn run_sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("single-thread pool").install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn run_sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    f()
}
