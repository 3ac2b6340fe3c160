//! Data-parallel iteration with a sequential fallback.
//!
//! The heavy loops in this crate — placebo permutations, leave-one-out
//! refits, sensitivity sweeps, importance-search restarts — are independent
//! fits mapped over a collection and collected back in input order, so they
//! parallelize trivially. With the default `parallel` feature the adapters
//! below re-export rayon; without it they fall back to plain sequential
//! iterators behind the same names, and the crate compiles with no thread
//! dependency at all.
//!
//! Because every reduction used here is order-preserving (`collect` keeps
//! input order; explicit reductions compare on deterministic keys), results
//! are bit-identical whichever path runs and however many workers rayon uses.

#[cfg(feature = "parallel")]
pub use rayon::iter::{IntoParallelIterator, IntoParallelRefIterator, ParallelIterator};

/// Runs `f` on a dedicated pool of `workers` threads; `None` uses the default
/// global pool. The sequential build ignores the worker count.
#[cfg(feature = "parallel")]
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("failed to build worker pool")
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<T>(_workers: Option<usize>, f: impl FnOnce() -> T) -> T {
    f()
}

#[cfg(not(feature = "parallel"))]
mod fallback {
    //! Sequential stand-ins for the rayon traits, so call sites are written
    //! once. Only the surface this crate uses is mirrored.

    pub trait IntoParallelIterator {
        type Item;
        type Iter: Iterator<Item = Self::Item>;
        fn into_par_iter(self) -> Self::Iter;
    }

    impl<I: IntoIterator> IntoParallelIterator for I {
        type Item = I::Item;
        type Iter = I::IntoIter;
        fn into_par_iter(self) -> Self::Iter {
            self.into_iter()
        }
    }

    pub trait IntoParallelRefIterator<'a> {
        type Item: 'a;
        type Iter: Iterator<Item = Self::Item>;
        fn par_iter(&'a self) -> Self::Iter;
    }

    impl<'a, T: 'a, C: 'a> IntoParallelRefIterator<'a> for C
    where
        &'a C: IntoIterator<Item = &'a T>,
    {
        type Item = &'a T;
        type Iter = <&'a C as IntoIterator>::IntoIter;
        fn par_iter(&'a self) -> Self::Iter {
            self.into_iter()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub use fallback::{IntoParallelIterator, IntoParallelRefIterator};
