//! Data-parallel map helpers with a sequential fallback.
//!
//! Output order always follows input order so results do not depend on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether the parallel backend was compiled in.
pub const PARALLEL_ENABLED: bool = cfg!(feature = "parallel");

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], func: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(func).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], func: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(func).collect()
}

/// Maps over `0..n`.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, func: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(func).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, func: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(func).collect()
}

/// Sequential reference path, always available (benchmarks compare against it).
pub fn map_sequential<T, R, F>(items: &[T], func: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(func).collect()
}

/// Dispatches to [`map`] or [`map_sequential`] at run time.
#[cfg(feature = "parallel")]
pub fn map_with<T, R, F>(parallel: bool, items: &[T], func: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel {
        map(items, func)
    } else {
        map_sequential(items, func)
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_with<T, R, F>(_parallel: bool, items: &[T], func: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    map_sequential(items, func)
}
