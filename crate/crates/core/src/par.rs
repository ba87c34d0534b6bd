//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these fan out over the rayon global
//! pool; without it they run sequentially. Results are always collected in
//! index order so reductions performed by callers are bit-identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting in order.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, min_len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .with_min_len(min_len.max(1))
        .map(f)
        .collect()
}

/// Map `f` over `0..n`, collecting in order.
#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, _min_len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Map `f` over a slice, collecting in order.
#[cfg(feature = "parallel")]
pub fn map_slice<T, R, F>(items: &[T], min_len: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items
        .par_iter()
        .with_min_len(min_len.max(1))
        .map(f)
        .collect()
}

/// Map `f` over a slice, collecting in order.
#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, R, F>(items: &[T], _min_len: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Whether the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
