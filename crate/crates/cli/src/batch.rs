//! Per-input fan-out. Results always come back in input order, so output
//! does not depend on the thread count.

use std::path::PathBuf;

use rayon::prelude::*;

pub fn map_inputs<T, F>(inputs: &[PathBuf], jobs: usize, f: F) -> anyhow::Result<Vec<anyhow::Result<T>>>
where
    T: Send,
    F: Fn(&PathBuf) -> anyhow::Result<T> + Sync,
{
    if jobs == 1 || inputs.len() < 2 {
        return Ok(inputs.iter().map(&f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(|| inputs.par_iter().map(&f).collect()))
}

/// Print failures to stderr in input order; returns how many there were.
pub fn report_failures<T>(inputs: &[PathBuf], results: &[anyhow::Result<T>]) -> usize {
    let mut failed = 0;
    for (path, r) in inputs.iter().zip(results) {
        if let Err(e) = r {
            eprintln!("{}: {e:#}", path.display());
            failed += 1;
        }
    }
    failed
}
