//! Thin layer over rayon so the kernels also build without threads.

#[cfg(feature = "parallel")]
mod imp {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    use rayon::prelude::*;

    fn pool(workers: usize) -> Arc<rayon::ThreadPool> {
        static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
        let mut pools = POOLS.get_or_init(Default::default).lock().unwrap();
        pools
            .entry(workers)
            .or_insert_with(|| {
                Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(workers)
                        .thread_name(|i| format!("axemu-worker-{i}"))
                        .build()
                        .expect("worker pool"),
                )
            })
            .clone()
    }

    /// Runs `f` on a pool of `workers` threads; `0` means the global pool.
    pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
        if workers == 0 {
            f()
        } else {
            pool(workers).install(f)
        }
    }

    /// Calls `f(block_index, block)` for consecutive `block_len` pieces of `data`.
    pub fn for_each_block<T: Send>(
        data: &mut [T],
        block_len: usize,
        f: impl Fn(usize, &mut [T]) + Sync + Send,
    ) {
        data.par_chunks_mut(block_len.max(1))
            .enumerate()
            .for_each(|(i, b)| f(i, b));
    }

    /// Like [`for_each_block`] over two buffers split in lockstep.
    pub fn for_each_block2<T: Send, U: Send>(
        a: &mut [T],
        a_len: usize,
        b: &mut [U],
        b_len: usize,
        f: impl Fn(usize, &mut [T], &mut [U]) + Sync + Send,
    ) {
        a.par_chunks_mut(a_len.max(1))
            .zip(b.par_chunks_mut(b_len.max(1)))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y));
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn with_workers<R: Send>(_workers: usize, f: impl FnOnce() -> R + Send) -> R {
        f()
    }

    pub fn for_each_block<T: Send>(
        data: &mut [T],
        block_len: usize,
        f: impl Fn(usize, &mut [T]) + Sync + Send,
    ) {
        data.chunks_mut(block_len.max(1))
            .enumerate()
            .for_each(|(i, b)| f(i, b));
    }

    pub fn for_each_block2<T: Send, U: Send>(
        a: &mut [T],
        a_len: usize,
        b: &mut [U],
        b_len: usize,
        f: impl Fn(usize, &mut [T], &mut [U]) + Sync + Send,
    ) {
        a.chunks_mut(a_len.max(1))
            .zip(b.chunks_mut(b_len.max(1)))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y));
    }
}

pub use imp::*;
