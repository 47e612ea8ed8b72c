//! Deterministic path-parallel Monte Carlo driver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, PathRng};
use crate::{Error, Result};

/// Paths are processed in fixed chunks of this size; chunk results are
/// merged in chunk order, so the output does not depend on thread count.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64) -> Result<Self> {
        let cfg = McConfig { n_paths, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::param("n_paths", "must be positive"));
        }
        Ok(())
    }

    /// Same path count with an independent seed.
    pub fn reseeded(&self, label: u64) -> Self {
        McConfig {
            n_paths: self.n_paths,
            seed: crate::rng::derive_seed(self.seed, label),
        }
    }
}

/// Runs `per_path(index, rng, &mut acc)` for every path and merges the
/// per-chunk accumulators in path order.
pub fn map_reduce<A, F, M>(cfg: &McConfig, init: impl Fn() -> A + Sync, per_path: F, merge: M) -> Result<A>
where
    A: Send,
    F: Fn(usize, &mut PathRng, &mut A) -> Result<()> + Sync,
    M: Fn(&mut A, A),
{
    cfg.validate()?;
    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let chunks: Vec<Result<A>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(cfg.n_paths);
            for path in lo..hi {
                let mut rng = stream_rng(cfg.seed, path as u64);
                per_path(path, &mut rng, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut out = init();
    for chunk in chunks {
        merge(&mut out, chunk?);
    }
    Ok(out)
}

/// Collects one value per path, in path order.
pub fn collect_paths<T, F>(cfg: &McConfig, per_path: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut PathRng) -> Result<T> + Sync,
{
    cfg.validate()?;
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = stream_rng(cfg.seed, path as u64);
            per_path(path, &mut rng)
        })
        .collect()
}
