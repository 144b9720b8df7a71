//! Data-parallel map helpers.
//!
//! Everything in this crate that fans out over independent items (clip
//! synthesis, masked rendering, evaluation forward passes) goes through
//! [`map_auto`], which uses rayon when the `parallel` feature is on and a
//! plain sequential loop otherwise. Output order always matches input order,
//! so results are byte-identical across both lanes and any thread count.
//!
//! [`map_seq`] is always sequential; benchmarks use it as the baseline.

/// Sequential map, kept as a named function so benches can compare lanes.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_auto<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    // par_iter + collect preserves input order, which the determinism
    // guarantees rely on.
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_auto<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    map_seq(items, f)
}

/// Like [`map_auto`] but for index ranges, for callers that build items lazily.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map_auto(&idx, |&i| f(i))
}
