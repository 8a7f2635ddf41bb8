//! Data-parallel mapping with a sequential fallback.
//!
//! Hot loops in this crate are all of the shape "map an independent
//! function over indices, then reduce in a fixed order": per-sample batch
//! gradients, per-image rendering, per-query scoring. [`map_indexed`]
//! runs the map step on rayon when the `parallel` feature is enabled and
//! sequentially otherwise; either way the output vector is in index
//! order, and callers reduce it sequentially. That discipline is what
//! keeps results bit-identical across feature settings and thread counts
//! (floating-point reduction order never varies).
//!
//! [`map_indexed_seq`] is always sequential and exists so benchmarks can
//! compare the two paths inside a single build.

/// Map `f` over `0..n`, producing results in index order.
///
/// Runs on the rayon thread pool when the `parallel` feature is enabled.
/// `f` must be pure with respect to the index (no shared mutable state);
/// every call site in this crate derives any randomness it needs from the
/// index via [`crate::rng::stream`].
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Sequential implementation used when the `parallel` feature is off.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Always-sequential twin of [`map_indexed`], for baseline benchmarks.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
