//! Thread pool for Langevin chains and a wall clock for traces.

use std::time::Instant;

use anyhow::{Context, Result};
use drb_core::langevin::ChainExecutor;
use drb_core::sinkhorn::Clock;
use rayon::prelude::*;

pub const THREADS_ENV: &str = "DRB_THREADS";

/// `DRB_THREADS` if set, else the flag, else the available parallelism.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("{THREADS_ENV} must be positive");
        }
        return Ok(n);
    }
    Ok(flag
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

/// Runs chains on a dedicated rayon pool. Each chain draws from its own
/// RNG stream, so results match [`drb_core::langevin::Sequential`] for any
/// thread count.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl ChainExecutor for RayonExecutor {
    fn map_chains(&self, n: usize, chain: &(dyn Fn(usize) -> Vec<f64> + Sync)) -> Vec<Vec<f64>> {
        self.pool
            .install(|| (0..n).into_par_iter().map(chain).collect())
    }
}

/// Milliseconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn elapsed_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use drb_core::langevin::{ula_sample, SamplerBudget, Sequential, SmoothedTarget};
    use drb_core::{CostOracle, DiscreteMeasure, Domain, PotentialVector};

    #[test]
    fn parallel_chains_match_sequential_chains() {
        let nus = vec![DiscreteMeasure::dirac(&[0.3, -0.2]).unwrap()];
        let psi = vec![PotentialVector::zeros(&nus[0])];
        let t = SmoothedTarget::new(
            Domain::ball(2, 1.0).unwrap(),
            0.1,
            1.0,
            1.0,
            vec![1.0],
            &nus,
            &psi,
            &CostOracle::SquaredEuclidean,
        )
        .unwrap();
        let b = SamplerBudget::manual(&t, 1e-3, 100, 4.0, None, false).unwrap();
        let seq = ula_sample(&t, &b, 64, 5, 1, &Sequential).unwrap();
        for threads in [1, 3] {
            let par = ula_sample(&t, &b, 64, 5, 1, &RayonExecutor::new(threads).unwrap()).unwrap();
            assert_eq!(seq, par);
        }
    }
}
