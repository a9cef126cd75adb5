use crate::error::{Error, Result};

/// Run `f` inside a rayon pool capped at `workers` threads. Results never
/// depend on `workers`; only wall time does.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Model(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
