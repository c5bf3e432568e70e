// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic batched Monte Carlo over a sized thread pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CbpError, Result};

/// Samples per batch. Batches, not workers, own the random streams, so the
/// output does not depend on the number of workers.
pub const BATCH: usize = 256;

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Default worker count: `CBP_WORKERS` if set, else 1.
pub fn default_workers() -> usize {
    std::env::var("CBP_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or(1)
}

/// Runs `f(index)` for `index in 0..count` on `workers` threads and returns
/// the results in index order.
pub fn map_indexed<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers <= 1 {
        return Ok((0..count).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CbpError::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
}

/// Splits `total` samples into fixed batches; `f(rng, size)` runs one batch
/// with its own stream. Results come back in batch order.
pub fn map_batches<T, F>(total: usize, seed: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync + Send,
{
    let batches = total.div_ceil(BATCH);
    map_indexed(batches, workers, |k| {
        let size = BATCH.min(total - k * BATCH);
        let mut rng = stream_rng(seed, k as u64);
        f(&mut rng, size)
    })
}
