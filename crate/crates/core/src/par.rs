//! Execution strategy for the data-parallel loops (frame rendering, pixel
//! histograms, dataset evaluation). With the `parallel` feature off every
//! strategy runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    /// Rayon's global pool, or sequential without the `parallel` feature.
    #[default]
    Parallel,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// `(0..n).map(f).collect()`, order preserved.
pub fn map_range<T, F>(n: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, order preserved.
pub fn map_slice<I, T, F>(items: &[I], mode: Parallelism, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Run `f` on a pool capped at `threads` workers when parallel.
pub fn with_pool<R: Send>(threads: usize, mode: Parallelism, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = (threads, mode);
    f()
}

/// Fold `items` in chunks and merge the per-chunk accumulators.
pub fn fold_chunks<T, A, I, F, M>(items: &[T], mode: Parallelism, identity: I, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, &T) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items
            .par_chunks(16 * 1024)
            .map(|chunk| chunk.iter().fold(identity(), &fold))
            .reduce(&identity, &merge);
    }
    let _ = (mode, &merge);
    items.iter().fold(identity(), fold)
}

/// Count of items per bin.
pub fn histogram<T, F>(items: &[T], bins: usize, mode: Parallelism, bin_of: F) -> Vec<u64>
where
    T: Sync,
    F: Fn(&T) -> usize + Sync + Send,
{
    fold_chunks(
        items,
        mode,
        || vec![0u64; bins],
        |mut h, item| {
            h[bin_of(item)] += 1;
            h
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    )
}
