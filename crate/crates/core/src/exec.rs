//! Data-parallel execution helpers.
//!
//! Every helper produces output in index order and reduces partial results
//! in a fixed chunk order, so results are bit-identical whether the work runs
//! on the rayon pool or on the calling thread. Without the `parallel` feature
//! [`Exec::Parallel`] silently runs sequentially.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Row-chunk size used for deterministic reductions.
pub const REDUCE_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `(0..n).map(f)` collected in order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps each slice element in order.
    pub fn map_slice<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Sums fixed-size row chunks of `0..n`.
    ///
    /// `partial` fills an accumulator of length `len` for one chunk; the chunk
    /// accumulators are then added left to right.
    pub fn chunked_sum<F>(self, n: usize, len: usize, partial: F) -> Vec<f64>
    where
        F: Fn(std::ops::Range<usize>, &mut [f64]) + Sync + Send,
    {
        let chunks = n.div_ceil(REDUCE_CHUNK);
        let parts = self.map(chunks, |c| {
            let start = c * REDUCE_CHUNK;
            let end = (start + REDUCE_CHUNK).min(n);
            let mut acc = vec![0.0; len];
            partial(start..end, &mut acc);
            acc
        });
        let mut total = vec![0.0; len];
        for part in parts {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        }
        total
    }
}

/// SplitMix64 step; derives independent stream seeds from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
