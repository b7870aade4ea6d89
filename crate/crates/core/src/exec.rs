//! Data-parallel execution helpers.
//!
//! All fan-out in this crate goes through `map_indexed`: each task gets its
//! own index (and derives its own RNG seed from it), results are collected in
//! index order, and any reduction happens sequentially afterwards. That makes
//! every output bit-identical whether the `parallel` feature is on or off and
//! however many worker threads rayon uses.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
///
/// Runs on the rayon pool when the `parallel` feature is enabled, otherwise
/// sequentially. The output is identical either way.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indexed`], kept unconditionally compiled so
/// benchmarks and parity tests can compare the two code paths directly.
pub fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Sums `f(i)` over `0..n` with a fixed chunked reduction order.
///
/// Chunk sums are computed (possibly in parallel) and then added in chunk
/// order, so the floating-point result does not depend on thread count.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    const CHUNK: usize = 1024;
    let chunks = n.div_ceil(CHUNK);
    let partial = map_indexed(chunks, |c| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    });
    partial.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.1).sin() / (1.0 + i as f64);
        let a = map_indexed(1000, f);
        let b = map_indexed_seq(1000, f);
        assert_eq!(a, b);
    }

    #[test]
    fn sum_is_chunk_order_stable() {
        let f = |i: usize| 1.0 / (1.0 + i as f64).powi(2);
        let s1 = sum_indexed(100_000, f);
        let s2 = sum_indexed(100_000, f);
        assert_eq!(s1.to_bits(), s2.to_bits());
        // Matches a plain sequential sum of the same chunking.
        let mut acc = 0.0;
        let partial: Vec<f64> = (0..98)
            .map(|c| {
                let lo = c * 1024;
                let hi = ((c + 1) * 1024).min(100_000);
                (lo..hi).map(f).sum::<f64>()
            })
            .collect();
        for p in partial {
            acc += p;
        }
        assert_eq!(acc.to_bits(), s1.to_bits());
    }

    #[test]
    fn empty_range() {
        assert_eq!(sum_indexed(0, |_| 1.0), 0.0);
        assert!(map_indexed(0, |i| i).is_empty());
    }
}
