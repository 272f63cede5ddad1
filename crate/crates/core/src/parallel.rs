//! Runtime parallelism policy.
//!
//! All data-parallel inner loops in the crate go through the helpers here.
//! With the `parallel` feature (default) they dispatch to rayon when enabled
//! at runtime; without the feature, or after `set_threads(1)`, they run
//! sequentially. Every loop assigns each output element to exactly one task
//! and all reductions are performed in a fixed order, so results are bitwise
//! identical regardless of thread count.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};

static ENABLED: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Minimum number of elements before a loop is worth fanning out.
pub const PAR_THRESHOLD: usize = 4096;

/// Whether data-parallel execution is currently active.
pub fn enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

/// Enable or disable data-parallel execution at runtime. A no-op without the
/// `parallel` feature.
pub fn set_enabled(on: bool) {
    ENABLED.store(on, Ordering::Relaxed);
}

/// Apply a `--threads` policy: 0 = auto (default pool), 1 = sequential,
/// n > 1 = a global pool of n threads.
pub fn set_threads(n: usize) -> Result<()> {
    match n {
        1 => {
            set_enabled(false);
            Ok(())
        }
        0 => {
            set_enabled(true);
            Ok(())
        }
        n => {
            #[cfg(feature = "parallel")]
            {
                // Ignore "already initialized": the pool size is then fixed for
                // the process, which is fine for a CLI run.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                set_enabled(true);
                Ok(())
            }
            #[cfg(not(feature = "parallel"))]
            {
                Err(Error::Config(format!(
                    "--threads {n} requested but this build has no parallel support"
                )))
            }
        }
    }
}

/// Ordered map over `0..n`.
pub fn fill<O, F>(n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync,
{
    #[cfg(feature = "parallel")]
    if enabled() && n >= 64 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Ordered map over a slice, preserving index order in the output.
pub fn map_slice<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync,
{
    #[cfg(feature = "parallel")]
    if enabled() && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Visit equal-sized chunks of `data` (the trailing short chunk included),
/// each chunk touched by exactly one task.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if enabled() && data.len() >= PAR_THRESHOLD {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_ordered() {
        let v = fill(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * 2));
    }

    #[test]
    fn chunks_cover_everything_once() {
        let mut v = vec![0u32; 10_000];
        for_each_chunk_mut(&mut v, 37, |_, c| {
            for x in c {
                *x += 1;
            }
        });
        assert!(v.iter().all(|&x| x == 1));
    }
}
