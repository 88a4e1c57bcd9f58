//! Batch execution of independent runs.
//!
//! With the `parallel` feature (default) [`map_runs`] fans out over the rayon
//! pool; without it, runs execute in order on the calling thread. Results are
//! always returned in run-index order, so aggregation downstream does not
//! depend on scheduling.

/// Evaluates `f(0), …, f(n − 1)` with the crate's default strategy.
pub fn map_runs<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_runs_parallel(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_runs_sequential(n, f)
    }
}

pub fn map_runs_sequential<T, F>(n: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_runs_parallel<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Name of the strategy [`map_runs`] uses in this build.
pub fn strategy() -> &'static str {
    if cfg!(feature = "parallel") {
        "rayon"
    } else {
        "sequential"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_run_order() {
        let out = map_runs(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
        assert!(map_runs(0, |i| i).is_empty());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn strategies_agree() {
        let f = |i: u64| (i as f64).sin().to_bits();
        assert_eq!(map_runs_parallel(257, f), map_runs_sequential(257, f));
    }
}
