//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper produces results in index order, so output is bit-identical
//! whether the `parallel` feature is enabled or not. A runtime switch lets
//! benches compare both paths in one binary.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Disable or re-enable the rayon path at runtime (no-op without the
/// `parallel` feature).
pub fn set_parallel(on: bool) {
    PARALLEL.store(on, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Map `0..n` to a vector, preserving index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Apply `f` to disjoint row chunks of `data` (each `row_len` wide).
pub fn for_each_row_chunk<F>(data: &mut [f64], row_len: usize, chunk_rows: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(row_len > 0 && data.len() % row_len == 0);
    let stride = chunk_rows * row_len;
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        data.par_chunks_mut(stride)
            .enumerate()
            .for_each(|(i, chunk)| f(i * chunk_rows, chunk));
        return;
    }
    for (i, chunk) in data.chunks_mut(stride).enumerate() {
        f(i * chunk_rows, chunk);
    }
}
