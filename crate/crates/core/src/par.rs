//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it (or
//! after [`set_mode`]`(Mode::Sequential)`) they run on the calling thread.
//! Outputs are always collected in input order and callers reduce them
//! sequentially, so the two modes produce bit-identical results.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Effective execution mode. Always `Sequential` without the `parallel`
/// feature.
pub fn mode() -> Mode {
    if cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed) {
        Mode::Parallel
    } else {
        Mode::Sequential
    }
}

/// Process-wide override, mainly for benchmarks and equivalence tests.
pub fn set_mode(mode: Mode) {
    FORCE_SEQUENTIAL.store(mode == Mode::Sequential, Ordering::Relaxed);
}

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Like [`map`] but short-circuits on the first error in input order.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

pub fn try_map_range<R, E, F>(n: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v: Vec<u32> = (0..1000).collect();
        let out = map(&v, |x| x * 2);
        assert_eq!(out, v.iter().map(|x| x * 2).collect::<Vec<_>>());
        let r: Result<Vec<usize>, usize> = try_map_range(10, |i| if i == 7 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(7));
    }
}
