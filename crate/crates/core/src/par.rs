//! Execution helpers for the inner lattice loops.
//!
//! With the `parallel` feature enabled (the default), node maps over a time
//! slice and independent task batches run on the rayon pool; without it the
//! same helpers run sequentially. Both paths visit elements in index order
//! and keep per-element arithmetic identical, so results do not depend on
//! the feature or the thread count.

/// Rows shorter than this are mapped sequentially even when the `parallel`
/// feature is on: the per-node work in a sweep is a handful of flops, so
/// fork-join overhead dominates on small slices.
pub const ROW_PAR_MIN: usize = 4096;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, in parallel for large `n` when enabled.
pub fn row_map<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= ROW_PAR_MIN {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Sequential node map, always available. Benchmarks compare this against
/// [`row_map_par`] directly.
pub fn row_map_seq<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Parallel node map with no size threshold.
#[cfg(feature = "parallel")]
pub fn row_map_par<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n` for coarse-grained independent tasks (one full
/// lattice solve per element). Parallel whenever the feature is on.
pub fn task_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        return (0..n).into_par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential task map, for benchmark comparison.
pub fn task_map_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
