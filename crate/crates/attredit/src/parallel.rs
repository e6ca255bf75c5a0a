//! Batch-level parallelism switch.
//!
//! Every data-parallel loop in the crate (per-sample forward/backward fan-out,
//! evaluation sweeps, dataset synthesis) goes through [`map_batch`]. The
//! parallel path preserves element order and reduces sequentially afterwards,
//! so results are bitwise identical to the sequential path regardless of
//! thread count. Compiling without the `parallel` feature removes rayon
//! entirely and forces the sequential path.

use std::sync::atomic::{AtomicU8, Ordering};

/// Execution mode for batch loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    /// Plain sequential iteration.
    Sequential,
    /// Order-preserving rayon fan-out. Only available with the `parallel` feature.
    #[cfg(feature = "parallel")]
    Rayon,
}

impl Parallelism {
    /// The crate-default mode: rayon when compiled in, sequential otherwise.
    pub fn auto() -> Self {
        #[cfg(feature = "parallel")]
        {
            Parallelism::Rayon
        }
        #[cfg(not(feature = "parallel"))]
        {
            Parallelism::Sequential
        }
    }
}

static MODE: AtomicU8 = AtomicU8::new(u8::MAX);

fn encode(mode: Parallelism) -> u8 {
    match mode {
        Parallelism::Sequential => 0,
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => 1,
    }
}

/// Set the process-wide default mode used by [`map_batch`].
pub fn set_mode(mode: Parallelism) {
    MODE.store(encode(mode), Ordering::Relaxed);
}

/// The current process-wide default mode.
pub fn mode() -> Parallelism {
    match MODE.load(Ordering::Relaxed) {
        0 => Parallelism::Sequential,
        #[cfg(feature = "parallel")]
        1 => Parallelism::Rayon,
        _ => Parallelism::auto(),
    }
}

/// Map `f` over `0..n` under an explicit mode, preserving index order.
pub fn map_batch_with<T, F>(mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
    }
}

/// Map `f` over `0..n` under the process-wide default mode.
pub fn map_batch<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_batch_with(mode(), n, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_batch_preserves_order() {
        let seq = map_batch_with(Parallelism::Sequential, 64, |i| i * 3 + 1);
        assert_eq!(seq, (0..64).map(|i| i * 3 + 1).collect::<Vec<_>>());
        #[cfg(feature = "parallel")]
        {
            let par = map_batch_with(Parallelism::Rayon, 64, |i| i * 3 + 1);
            assert_eq!(seq, par);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential_bitwise_on_float_work() {
        let work = |i: usize| {
            let mut acc = 0.0f64;
            for k in 0..100 {
                acc += ((i * 31 + k) as f64).sin() * 1e-3;
            }
            acc
        };
        let seq = map_batch_with(Parallelism::Sequential, 32, work);
        let par = map_batch_with(Parallelism::Rayon, 32, work);
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
