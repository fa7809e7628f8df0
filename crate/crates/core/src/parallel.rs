//! Data-parallel helpers. With the `parallel` feature, work is spread over the
//! rayon pool unless sequential mode is selected at runtime; results always come
//! back in input order, and reductions are done sequentially in that order so
//! floating-point sums do not depend on the thread count.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces (or lifts) sequential execution for all helpers in this module.
pub fn set_sequential(sequential: bool) {
    SEQUENTIAL.store(sequential, Ordering::SeqCst);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::SeqCst)
}

/// Caps worker threads. `1` also switches to sequential mode.
pub fn configure_threads(threads: usize) {
    set_sequential(threads == 1);
    #[cfg(feature = "parallel")]
    if threads > 1 {
        // The global pool can only be built once; later calls keep the first size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
