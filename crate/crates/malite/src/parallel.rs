//! Deterministic fan-out over items.
//!
//! Results are placed by item index, so the output never depends on
//! scheduling. Work that needs randomness derives an RNG stream from the
//! item index, which keeps every caller schedule-independent by
//! construction. The `MALITE_THREADS` environment variable (0 = auto) is
//! the process-wide cap honored by the CLI.

/// Resolve a requested worker count; 0 means one worker per available CPU.
pub fn worker_count(requested: usize) -> usize {
    if requested > 0 {
        return requested;
    }
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Worker count from the `MALITE_THREADS` environment variable.
pub fn workers_from_env() -> usize {
    let requested = std::env::var("MALITE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    worker_count(requested)
}

/// Map `f` over `0..len` on up to `workers` threads; `out[i] = f(i)`.
#[cfg(not(target_arch = "wasm32"))]
pub fn parallel_map<U, F>(len: usize, workers: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    let workers = worker_count(workers).min(len.max(1));
    if workers <= 1 || len <= 1 {
        return (0..len).map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut per_worker: Vec<Vec<(usize, U)>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut got = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= len {
                            return got;
                        }
                        got.push((i, f(i)));
                    }
                })
            })
            .collect();
        per_worker = handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect();
    });
    let mut slots: Vec<Option<U>> = (0..len).map(|_| None).collect();
    for chunk in per_worker {
        for (i, v) in chunk {
            slots[i] = Some(v);
        }
    }
    slots
        .into_iter()
        .map(|s| s.expect("every index computed"))
        .collect()
}

#[cfg(target_arch = "wasm32")]
pub fn parallel_map<U, F>(len: usize, _workers: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    (0..len).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_order_matches_index_order() {
        let out = parallel_map(100, 4, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn worker_counts_agree() {
        let one = parallel_map(37, 1, |i| i as u64 * 3);
        let four = parallel_map(37, 4, |i| i as u64 * 3);
        assert_eq!(one, four);
    }

    #[test]
    fn zero_is_auto() {
        assert!(worker_count(0) >= 1);
        assert_eq!(worker_count(3), 3);
    }
}
