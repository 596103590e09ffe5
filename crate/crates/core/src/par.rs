//! Index-parallel map with a sequential fallback.
//!
//! With the `parallel` feature the closure runs on the rayon pool when
//! `parallel` is true. Output order always follows the index order, so results
//! are identical whichever path runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indices<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel && n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// True when this build can run work on the rayon pool.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
