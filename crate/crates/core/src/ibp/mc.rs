use rayon::prelude::*;

use crate::error::{Error, Result};

/// Sample count, master seed and worker count for a Monte Carlo run.
///
/// Sample `i` draws its noise from the stream `(seed, i)`, so results do not
/// depend on `workers`; `workers = 1` runs on the calling thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            paths: 100_000,
            seed: 42,
            workers: 1,
        }
    }
}

impl McConfig {
    pub fn new(paths: usize, seed: u64) -> Self {
        McConfig {
            paths,
            seed,
            workers: 1,
        }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        McConfig { workers, ..self }
    }

    /// Evaluate `f(i)` for every sample index, returning results in index order.
    pub fn run<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        if self.paths == 0 {
            return Err(Error::InvalidParameter("need at least one path".into()));
        }
        let n = self.paths as u64;
        if self.workers <= 1 {
            return (0..n).map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
        pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let f = |i: u64| Ok(i * i);
        let a = McConfig::new(1000, 0).run(f).unwrap();
        let b = McConfig::new(1000, 0).with_workers(4).run(f).unwrap();
        assert_eq!(a, b);
        assert!(McConfig::new(0, 0).run(f).is_err());
    }
}
