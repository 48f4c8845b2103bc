//! Replicate-level parallelism with order-preserving collection.
//!
//! Each replicate derives its own random stream from its index, results are
//! gathered in index order, and every reduction happens sequentially on the
//! collected vector. Output is therefore the same for any pool size.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

const CHUNK: usize = 256;

/// Runs `task(i)` for i in 0..count and returns the results in index order.
/// On failure the error of the lowest failing index is returned. Replicates
/// above an index already known to fail are skipped; every index below it
/// still runs, so the reported error does not depend on scheduling.
pub fn run_replicates<T, E, F>(count: usize, task: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync,
{
    let lowest_failure = AtomicUsize::new(usize::MAX);
    let mut out = Vec::with_capacity(count);
    let mut start = 0usize;
    while start < count {
        let end = (start + CHUNK).min(count);
        let chunk: Vec<Option<Result<T, E>>> = (start..end)
            .into_par_iter()
            .map(|i| {
                if i > lowest_failure.load(Ordering::Relaxed) {
                    return None;
                }
                let r = task(i as u64);
                if r.is_err() {
                    lowest_failure.fetch_min(i, Ordering::Relaxed);
                }
                Some(r)
            })
            .collect();
        for r in chunk {
            match r {
                Some(r) => out.push(r?),
                None => unreachable!("skipped replicates lie above a failure"),
            }
        }
        start = end;
    }
    Ok(out)
}

/// Infallible variant of [`run_replicates`].
pub fn map_replicates<T, F>(count: usize, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    (0..count).into_par_iter().map(|i| task(i as u64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_are_in_index_order() {
        let v: Result<Vec<u64>, ()> = run_replicates(1000, |i| Ok(i * i));
        assert_eq!(v.unwrap(), (0..1000u64).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn lowest_failing_index_is_reported() {
        let r: Result<Vec<u64>, u64> = run_replicates(900, |i| if i % 300 == 299 { Err(i) } else { Ok(i) });
        assert_eq!(r.unwrap_err(), 299);
    }

    #[test]
    fn pool_size_does_not_change_results() {
        let work = |i: u64| (i as f64).sqrt().sin();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| map_replicates(500, work));
        let b = four.install(|| map_replicates(500, work));
        assert_eq!(a, b);
    }
}
