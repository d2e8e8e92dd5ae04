//! Partitioned map-reduce used by every data-parallel stage.
//!
//! Work is cut into fixed-size chunks independent of the worker count and
//! partial results are merged in chunk order, so results are bit-identical
//! for any number of workers.

use std::ops::Range;

use rayon::prelude::*;

/// Rows per partition.
pub const CHUNK_ROWS: usize = 2048;

pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    (0..len.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(len))
        .collect()
}

/// Maps every chunk of `0..len` in parallel and folds the partials in order.
pub fn map_reduce<A, M, R>(len: usize, map: M, merge: R) -> Option<A>
where
    A: Send,
    M: Fn(Range<usize>) -> A + Sync + Send,
    R: Fn(A, A) -> A,
{
    let parts: Vec<A> = chunk_ranges(len, CHUNK_ROWS).into_par_iter().map(map).collect();
    parts.into_iter().reduce(merge)
}

/// Runs `f` on a dedicated pool with `workers` threads (0 = all cores).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(f)
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
