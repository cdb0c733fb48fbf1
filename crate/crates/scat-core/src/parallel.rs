//! Data-parallel helpers with a deterministic sequential fallback.
//!
//! The `parallel` cargo feature (on by default) backs [`map_indexed`] with
//! rayon. Results are always collected in input order, and every reduction in
//! the crate merges per-item results in index order, so parallel and
//! sequential execution produce bitwise-identical numbers.
//!
//! [`set_sequential`] flips execution to the fallback at runtime even when the
//! feature is compiled in; the benchmark suite uses it to compare both paths
//! within one binary.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force (or stop forcing) sequential execution at runtime.
pub fn set_sequential(sequential: bool) {
    FORCE_SEQUENTIAL.store(sequential, Ordering::SeqCst);
}

/// Whether calls will currently run sequentially.
pub fn is_sequential() -> bool {
    !cfg!(feature = "parallel") || FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Apply `f` to every item, returning results in input order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !FORCE_SEQUENTIAL.load(Ordering::SeqCst) {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Apply `f` to every index in `0..n`, returning results in index order.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !FORCE_SEQUENTIAL.load(Ordering::SeqCst) {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
