//! Thin data-parallel layer. With the `parallel` feature the helpers fan out
//! over rayon's pool; without it they run the identical per-element closures
//! in order. Every element is computed independently, so both paths produce
//! bit-identical results.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many independent items the sequential loop is used even when
/// the `parallel` feature is on.
pub const PAR_MIN_ITEMS: usize = 32;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Routes every helper through its sequential loop, process-wide. Results
/// do not change; benchmarks use this to time both paths in one binary.
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

/// Whether `items` independent pieces of work go to the thread pool.
#[inline]
pub fn use_parallel(items: usize) -> bool {
    cfg!(feature = "parallel") && items >= PAR_MIN_ITEMS && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Calls `f(index, chunk)` for every `chunk_len`-sized chunk of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if use_parallel(data.len() / chunk_len) {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(idx, chunk)| f(idx, chunk));
            return;
        }
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(idx, chunk)| f(idx, chunk));
}

/// Like [`for_each_chunk_mut`] but walks two equally-chunked slices in lockstep.
pub fn for_each_chunk_pair_mut<A, B, F>(a: &mut [A], a_len: usize, b: &mut [B], b_len: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync + Send,
{
    if a_len == 0 || b_len == 0 {
        return;
    }
    debug_assert_eq!(a.len() / a_len, b.len() / b_len);
    #[cfg(feature = "parallel")]
    {
        if use_parallel(a.len() / a_len) {
            a.par_chunks_mut(a_len)
                .zip(b.par_chunks_mut(b_len))
                .enumerate()
                .for_each(|(idx, (ca, cb))| f(idx, ca, cb));
            return;
        }
    }
    a.chunks_mut(a_len)
        .zip(b.chunks_mut(b_len))
        .enumerate()
        .for_each(|(idx, (ca, cb))| f(idx, ca, cb));
}

/// Fills `out[i] = f(i)`.
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    for_each_chunk_mut(out, 1, |idx, slot| slot[0] = f(idx));
}

/// Runs independent jobs (seeds, sweep cells) and returns results in input order.
pub fn map_jobs<J, R, F>(jobs: &[J], f: F) -> Vec<R>
where
    J: Sync,
    R: Send,
    F: Fn(&J) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if use_parallel(PAR_MIN_ITEMS * jobs.len().min(2)) {
            return jobs.par_iter().map(&f).collect();
        }
    }
    jobs.iter().map(&f).collect()
}

/// Three-slice variant of [`for_each_chunk_pair_mut`].
pub fn for_each_chunk_triple_mut<A, B, C, F>(
    a: (&mut [A], usize),
    b: (&mut [B], usize),
    c: (&mut [C], usize),
    f: F,
) where
    A: Send,
    B: Send,
    C: Send,
    F: Fn(usize, &mut [A], &mut [B], &mut [C]) + Sync + Send,
{
    let ((a, a_len), (b, b_len), (c, c_len)) = (a, b, c);
    if a_len == 0 || b_len == 0 || c_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if use_parallel(a.len() / a_len) {
            a.par_chunks_mut(a_len)
                .zip(b.par_chunks_mut(b_len))
                .zip(c.par_chunks_mut(c_len))
                .enumerate()
                .for_each(|(idx, ((ca, cb), cc))| f(idx, ca, cb, cc));
            return;
        }
    }
    a.chunks_mut(a_len)
        .zip(b.chunks_mut(b_len))
        .zip(c.chunks_mut(c_len))
        .enumerate()
        .for_each(|(idx, ((ca, cb), cc))| f(idx, ca, cb, cc));
}
