//! Data-parallel execution with a sequential fallback.
//!
//! Every parallel loop in the crate maps an index range to values and
//! collects them in index order, so results never depend on how work is
//! scheduled. Reductions over the collected values are done sequentially
//! afterwards in fixed block order (see [`block_sum`]).
//!
//! With the `parallel` feature disabled, [`Execution::Parallel`] silently
//! runs sequentially.

/// Number of items folded into one partial sum before partial sums are
/// combined. Fixed so that floating-point reductions are reproducible.
pub const REDUCTION_BLOCK: usize = 256;

/// Environment variable read by the CLI to size the worker pool.
pub const WORKERS_ENV: &str = "GHOSTIMG_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel => par_map(n, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `op` on a dedicated pool of `workers` threads. Without the
/// `parallel` feature this just calls `op`.
pub fn with_workers<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("failed to build worker pool");
        pool.install(op)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        op()
    }
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Sums `values` in blocks of [`REDUCTION_BLOCK`], then sums the block
/// totals left to right. The association order depends only on the length.
pub fn block_sum(values: &[f64]) -> f64 {
    values
        .chunks(REDUCTION_BLOCK)
        .map(|block| block.iter().sum::<f64>())
        .fold(0.0, |acc, s| acc + s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let seq = Execution::Sequential.map(1000, |i| i * i);
        let par = Execution::Parallel.map(1000, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn block_sum_is_independent_of_workers() {
        let values: Vec<f64> = (0..10_000).map(|i| (i as f64).sin() * 1e-3).collect();
        let a = with_workers(1, || {
            block_sum(&Execution::Parallel.map(values.len(), |i| values[i]))
        });
        let b = with_workers(4, || {
            block_sum(&Execution::Parallel.map(values.len(), |i| values[i]))
        });
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
