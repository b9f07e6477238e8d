//! Data-parallel execution with a sequential fallback.
//!
//! Every batch evaluation in the crate (stations, grid nodes, noise seeds)
//! goes through [`Execution::map`]. Results are always collected in input
//! order, so switching modes never changes a single output bit.

/// How batch loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

/// Below this many items the parallel path is not worth the fork/join.
#[cfg_attr(not(feature = "parallel"), allow(dead_code))]
const MIN_PARALLEL_LEN: usize = 64;

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if items.len() >= MIN_PARALLEL_LEN => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Maps over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if n >= MIN_PARALLEL_LEN => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Like [`map_range`](Self::map_range) without the size threshold; for
    /// a handful of expensive jobs such as whole inversions.
    pub fn map_jobs<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.37).collect();
        let a = Execution::Sequential.map(&xs, |x| x.sin());
        let b = Execution::Parallel.map(&xs, |x| x.sin());
        assert_eq!(a, b);
        let c = Execution::Parallel.map_jobs(5, |i| i * i);
        assert_eq!(c, vec![0, 1, 4, 9, 16]);
    }
}
