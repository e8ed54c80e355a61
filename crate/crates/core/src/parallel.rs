//! Row-parallel execution helpers.
//!
//! Every kernel in the crate splits work by output row and keeps each row's
//! reduction in a fixed sequential order, so the parallel and sequential
//! paths produce bitwise-identical results. With the `parallel` feature
//! disabled, everything runs on the calling thread.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Route all kernels through the sequential path at runtime, even when the
/// `parallel` feature is compiled in. Used by the benchmarks.
pub fn set_force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Rows below this count are not worth a rayon split.
#[cfg(feature = "parallel")]
const MIN_PAR_ROWS: usize = 32;

/// Apply `f(row_index, row)` to every `width`-sized chunk of `data`.
pub fn for_each_row<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && data.len() / width >= MIN_PAR_ROWS {
            use rayon::prelude::*;
            data.par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Collect `f(i)` for `i in 0..n`, preserving index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && n >= MIN_PAR_ROWS {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
