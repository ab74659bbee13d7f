//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers distribute disjoint output rows
//! over the rayon pool; without it (or after [`set_parallel`]`(false)`) they
//! run sequentially. Every output element is computed by the same closure in
//! either mode, so results are bitwise identical.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
static ENABLED: AtomicBool = AtomicBool::new(true);

/// Below this many output elements per task, work stays on one thread.
#[cfg(feature = "parallel")]
const MIN_CHUNK: usize = 2048;

/// Enables or disables the parallel path at runtime (no-op without the
/// `parallel` feature).
pub fn set_parallel(on: bool) {
    #[cfg(feature = "parallel")]
    ENABLED.store(on, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = on;
}

pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        ENABLED.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Calls `f(j, row)` for each row `j` of a row-major array.
pub fn for_rows<F>(out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if parallel_enabled() && out.len() >= 2 * MIN_CHUNK {
        let rows_per = MIN_CHUNK.div_ceil(row_len).max(1);
        out.par_chunks_mut(rows_per * row_len)
            .enumerate()
            .for_each(|(c, chunk)| {
                for (r, row) in chunk.chunks_mut(row_len).enumerate() {
                    f(c * rows_per + r, row);
                }
            });
        return;
    }
    for (j, row) in out.chunks_mut(row_len).enumerate() {
        f(j, row);
    }
}

/// Calls `f(k, &mut out[k])` for every element.
pub fn for_each_index<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut f64) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() && out.len() >= 2 * MIN_CHUNK {
        out.par_chunks_mut(MIN_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                for (r, v) in chunk.iter_mut().enumerate() {
                    f(c * MIN_CHUNK + r, v);
                }
            });
        return;
    }
    for (k, v) in out.iter_mut().enumerate() {
        f(k, v);
    }
}

/// Runs two closures, concurrently when the parallel path is active.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return rayon::join(a, b);
    }
    (a(), b())
}

/// Maps `f` over `0..n` and collects the results in index order.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
