//! Work dispatch for the data-parallel drivers (sweeps, Monte Carlo
//! ensembles, hierarchy blocks).
//!
//! The sequential path is always compiled; the `parallel` feature adds a
//! rayon path and makes it the default. Every driver produces identical
//! results under either path: work items are indexed and reductions happen
//! in index order.

/// Execution mode for the embarrassingly parallel drivers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Threading {
    /// Parallel when the crate is built with the `parallel` feature,
    /// sequential otherwise.
    #[default]
    Auto,
    Sequential,
    /// Force the rayon path (falls back to sequential without the feature).
    Parallel,
}

impl Threading {
    pub fn parallel(self) -> bool {
        match self {
            Threading::Sequential => false,
            Threading::Parallel => cfg!(feature = "parallel"),
            Threading::Auto => cfg!(feature = "parallel"),
        }
    }
}

/// Map `f` over 0..n, preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, threading: Threading, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threading.parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = threading;
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`].
pub fn try_map_indexed<T, E, F>(
    n: usize,
    threading: Threading,
    f: F,
) -> std::result::Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> std::result::Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threading.parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = threading;
    (0..n).map(f).collect()
}

/// Apply `f` to disjoint output chunks indexed by chunk number. Used by the
/// hierarchy right-hand side where block writes are independent.
pub fn for_each_chunk<T, F>(chunks: &mut [T], threading: Threading, f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threading.parallel() {
        use rayon::prelude::*;
        chunks
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = threading;
    for (i, c) in chunks.iter_mut().enumerate() {
        f(i, c);
    }
}
