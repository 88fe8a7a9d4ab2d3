//! Worker-count setting for stage-internal parallelism.
//!
//! Parallel sections split work into independent column blocks whose results
//! do not depend on the block boundaries, so outputs are bitwise identical for
//! every worker count.

use std::sync::atomic::{AtomicUsize, Ordering};

static WORKERS: AtomicUsize = AtomicUsize::new(1);

pub fn set_workers(n: usize) {
    WORKERS.store(n.max(1), Ordering::Relaxed);
}

pub fn workers() -> usize {
    WORKERS.load(Ordering::Relaxed)
}

/// Runs `f` once per index in `0..len`, spreading indices over the configured
/// workers, and returns results in index order.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers().min(len.max(1));
    if workers <= 1 || cfg!(target_arch = "wasm32") {
        return (0..len).map(f).collect();
    }
    let chunk = len.div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    let lo = (w * chunk).min(len);
                    let hi = ((w + 1) * chunk).min(len);
                    (lo..hi).map(f).collect::<Vec<T>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
