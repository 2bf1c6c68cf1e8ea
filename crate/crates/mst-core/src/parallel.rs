//! Batch-of-Q job scheduling.  Jobs are dispatched in batches of at most
//! `workers`; the next batch starts only after the whole current batch has
//! finished.  Results come back in job order, and every job is a pure function
//! of its input, so outputs are identical for any worker count.

/// Runs `f` over `jobs`, at most `workers` at a time, preserving job order.
pub fn run_batched<J, R, F>(jobs: Vec<J>, workers: usize, f: &F) -> Vec<R>
where
    J: Send,
    R: Send,
    F: Fn(J) -> R + Sync,
{
    let workers = workers.max(1);
    if workers == 1 || jobs.len() <= 1 {
        return jobs.into_iter().map(f).collect();
    }
    let mut out: Vec<R> = Vec::with_capacity(jobs.len());
    let mut queue = jobs.into_iter();
    loop {
        let batch: Vec<J> = queue.by_ref().take(workers).collect();
        if batch.is_empty() {
            break;
        }
        let mut slots: Vec<Option<R>> = Vec::new();
        slots.resize_with(batch.len(), || None);
        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(batch.len());
            for job in batch {
                handles.push(scope.spawn(move || f(job)));
            }
            for (slot, handle) in slots.iter_mut().zip(handles) {
                *slot = Some(handle.join().expect("worker panicked"));
            }
        });
        out.extend(slots.into_iter().map(|s| s.expect("missing result")));
    }
    out
}

/// Applies `f` to fixed-size index chunks in parallel and returns per-chunk
/// results in chunk order.  The chunk size is independent of the worker count
/// so per-chunk outputs never depend on scheduling.
pub fn map_chunks<R, F>(len: usize, chunk: usize, workers: usize, f: &F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync,
{
    let ranges: Vec<std::ops::Range<usize>> = (0..len)
        .step_by(chunk.max(1))
        .map(|start| start..(start + chunk).min(len))
        .collect();
    run_batched(ranges, workers, f)
}
