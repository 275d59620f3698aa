//! Data-parallel helpers. With the `parallel` feature the parallel path runs on
//! rayon; without it both variants run sequentially. Results never depend on
//! the choice: every output slot is computed independently and collected in
//! index order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Apply `f(row_index, row)` to consecutive rows of `data` and collect the
/// per-row results in order.
pub fn map_rows_mut<T, R, F>(exec: Execution, data: &mut [T], row_len: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            data.par_chunks_mut(row_len)
                .enumerate()
                .map(|(r, row)| f(r, row))
                .collect()
        }
        _ => data
            .chunks_mut(row_len)
            .enumerate()
            .map(|(r, row)| f(r, row))
            .collect(),
    }
}

/// `(0..n).map(f)` collected in order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}
