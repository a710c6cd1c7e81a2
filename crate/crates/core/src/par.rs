//! Data-parallel helpers with a sequential fallback.
//!
//! Built with the `parallel` feature (the default), [`map_indexed`] fans the
//! closure out over rayon's thread pool when asked to; without the feature it
//! always runs sequentially and rayon is not linked at all. Results come back
//! in index order either way, so both modes produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to `0..n` and collect the results in order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Apply `f` to `0..n` and collect the results in order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, _parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
