//! Data-parallel execution switch.
//!
//! Every hot loop in the crate (per-ray rendering, per-ray gradients, per-pixel
//! filtering, per-particle transfers) goes through [`Exec`]. With the `parallel`
//! feature enabled, [`Exec::Parallel`] fans out over rayon's global pool; without it,
//! both variants run the same sequential loop. Results are always collected in
//! index order, and reductions happen afterwards in that fixed order, so the two
//! paths produce bit-identical output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    /// Whether this build can actually run in parallel.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `f(i)` for `i in 0..n`, collected in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f` to each chunk of `items`, collecting per-chunk results in order.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items
                .par_chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect();
        }
        items.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
    }

    /// Mutates every element in place; `f` receives the element index.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
            return;
        }
        items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
}
