//! Worker-count control for rayon.

use rayon::ThreadPoolBuilder;

/// Runs `f` on a dedicated pool of `workers` threads. All parallel iterators
/// started inside `f` use that pool. `workers == 0` means one thread.
pub fn with_workers<T, F>(workers: usize, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("failed to build worker pool");
    pool.install(f)
}
