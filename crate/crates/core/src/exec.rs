//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into the same fixed-size chunks and results are
//! returned in chunk order, so reductions over them are bitwise identical
//! whether the `parallel` feature is enabled or not.

/// How batch-level work is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Maps `f` over consecutive chunks of `items`, preserving chunk order.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_chunks(chunk).map(f).collect()
            }
            _ => items.chunks(chunk).map(f).collect(),
        }
    }

    /// Runs `f` on a pool of `jobs` threads (the global pool when `jobs` is
    /// zero). Sequential mode and builds without `parallel` call `f` directly.
    pub fn install<R, F>(self, jobs: usize, f: F) -> R
    where
        R: Send,
        F: FnOnce() -> R + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if jobs > 0 => match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                Ok(pool) => pool.install(f),
                Err(_) => f(),
            },
            _ => {
                let _ = jobs;
                f()
            }
        }
    }

    /// Like [`Execution::map_chunks`], but chunk `i` also gets exclusive use of
    /// `states[i]`. `states` must hold at least one entry per chunk.
    pub fn map_chunks_with<T, S, R, F>(self, items: &[T], chunk: usize, states: &mut [S], f: F) -> Vec<R>
    where
        T: Sync,
        S: Send,
        R: Send,
        F: Fn(&[T], &mut S) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        assert!(states.len() >= items.len().div_ceil(chunk), "one state per chunk");
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_chunks(chunk).zip(states.par_iter_mut()).map(|(c, s)| f(c, s)).collect()
            }
            _ => items.chunks(chunk).zip(states.iter_mut()).map(|(c, s)| f(c, s)).collect(),
        }
    }

    /// Maps `f` over items, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }
}
