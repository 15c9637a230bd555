//! Data-parallel execution helpers.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it they
//! run the same closures in order. Every reduction combines per-chunk partial
//! results in chunk order, so parallel and sequential runs are bit-identical.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// True when work will be spread across the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Run `f` with parallel dispatch disabled process-wide. Used by the benches
/// to compare both paths in one binary; results are identical either way.
pub fn with_sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.swap(true, Ordering::SeqCst);
    let out = f();
    FORCE_SEQUENTIAL.store(prev, Ordering::SeqCst);
    out
}

/// Calls `f(index, chunk)` for each `chunk`-sized piece of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps `0..n` through `f`, preserving index order in the output.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Elementwise map of `src` into `dst`.
pub fn map_into<F>(dst: &mut [f64], src: &[f64], f: F)
where
    F: Fn(f64) -> f64 + Send + Sync,
{
    const GRAIN: usize = 1 << 14;
    debug_assert_eq!(dst.len(), src.len());
    if dst.len() < GRAIN {
        dst.iter_mut().zip(src).for_each(|(d, &s)| *d = f(s));
        return;
    }
    for_each_chunk_mut(dst, GRAIN, |i, d| {
        let s = &src[i * GRAIN..i * GRAIN + d.len()];
        d.iter_mut().zip(s).for_each(|(d, &s)| *d = f(s));
    });
}

/// Sums per-index partial buffers (all of length `len`) in index order.
pub fn reduce_buffers(n: usize, len: usize, f: impl Fn(usize) -> Vec<f64> + Send + Sync) -> Vec<f64> {
    let parts = map_indices(n, f);
    let mut acc = vec![0.0; len];
    for p in parts {
        debug_assert_eq!(p.len(), len);
        for (a, b) in acc.iter_mut().zip(&p) {
            *a += *b;
        }
    }
    acc
}
