//! Data-parallel execution with a sequential fallback.
//!
//! Every parallel loop in the crate is an order-preserving map over
//! independent items; reductions happen afterwards, sequentially, in index
//! order. Results are therefore bit-identical for any thread count and with
//! the `parallel` feature disabled.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Rayon when the `parallel` feature is enabled, sequential otherwise.
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
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps over consecutive chunks of `chunk` items (the last may be short).
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_chunks(chunk).map(f).collect()
            }
            _ => items.chunks(chunk).map(f).collect(),
        }
    }
}

/// Runs `f` inside a pool of `jobs` worker threads (rayon builds only).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if jobs > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        let c = Exec::Parallel.map_chunks(&xs, 7, |c| c.iter().sum::<u64>());
        let d = Exec::Sequential.map_chunks(&xs, 7, |c| c.iter().sum::<u64>());
        assert_eq!(c, d);
        assert_eq!(c.len(), 143);
        assert_eq!(Exec::Parallel.map_range(5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
