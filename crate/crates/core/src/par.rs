//! Data-parallel helpers.
//!
//! With the `parallel` feature every helper fans work out over rayon; without
//! it the same closures run sequentially. Work is always split along
//! independent output chunks, and each chunk is reduced in a fixed order, so
//! results are bit-identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many output elements the sequential path is used.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 4096;

/// Calls `f(i, chunk)` for every `chunk_len`-sized chunk of `out`.
pub fn for_each_chunk<F>(out: &mut [f32], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if out.len() >= PAR_THRESHOLD && out.len() > chunk_len {
            out.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    out.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Evaluates `f(i)` for `i in 0..n` and collects the results in order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Elementwise map into a fresh buffer.
pub fn map_slice<F>(src: &[f32], f: F) -> Vec<f32>
where
    F: Fn(f32) -> f32 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if src.len() >= PAR_THRESHOLD {
            return src.par_iter().map(|&v| f(v)).collect();
        }
    }
    src.iter().map(|&v| f(v)).collect()
}

/// Elementwise zip-map into a fresh buffer.
pub fn zip_map<F>(a: &[f32], b: &[f32], f: F) -> Vec<f32>
where
    F: Fn(f32, f32) -> f32 + Sync + Send,
{
    debug_assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    {
        if a.len() >= PAR_THRESHOLD {
            return a.par_iter().zip(b.par_iter()).map(|(&x, &y)| f(x, y)).collect();
        }
    }
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Number of worker threads the parallel paths use (1 without the feature).
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Caps the global worker pool. Has no effect once the pool has been built or
/// when the crate is compiled without `parallel`.
pub fn init_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

/// Runs `f` with parallel kernels restricted to one thread.
pub fn sequential<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool");
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}
