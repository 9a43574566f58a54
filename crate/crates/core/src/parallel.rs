use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};

/// Runs indexed work items on a fixed number of workers. Results always come
/// back in index order, so output never depends on the worker count.
pub struct Pool {
    workers: usize,
    inner: Option<ThreadPool>,
}

impl Pool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidArgument("workers must be >= 1".into()));
        }
        let inner = if workers == 1 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
            )
        };
        Ok(Self { workers, inner })
    }

    pub fn sequential() -> Self {
        Self {
            workers: 1,
            inner: None,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.inner {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

impl Default for Pool {
    fn default() -> Self {
        Self::sequential()
    }
}

/// Splits `total` items into consecutive blocks of at most `block` items.
pub(crate) fn blocks(total: usize, block: usize) -> Vec<(usize, usize)> {
    (0..total.div_ceil(block))
        .map(|b| (b * block, ((b + 1) * block).min(total)))
        .collect()
}
