//! Execution-mode helpers: data-parallel maps and reductions with a
//! sequential fallback.
//!
//! Reductions are deterministic by construction: work is mapped into
//! index-ordered buffers (or fixed-size chunk partials) and folded
//! sequentially in index order, so `Parallel` and `Sequential` produce
//! bit-identical results regardless of thread count.

/// Chunk length for partial-sum reductions. Fixed (not thread-dependent) so
/// the summation tree is identical in both modes.
const SUM_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

impl Default for Mode {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        Mode::Parallel
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        Mode::Sequential
    }
}

/// Map `f` over `0..n` into an index-ordered vector.
pub fn map_indexed<R, F>(mode: Mode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode {
        Mode::Sequential => (0..n).map(f).collect(),
        Mode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

/// Sum `f(i)` over `0..n` with a fixed chunked summation order.
pub fn sum_indexed<F>(mode: Mode, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(SUM_CHUNK);
    let partial = |c: usize| {
        let lo = c * SUM_CHUNK;
        let hi = (lo + SUM_CHUNK).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    };
    let partials = map_indexed(mode, chunks, partial);
    partials.iter().sum()
}

/// Sum a vector-valued map: `f(i)` yields (index, value) contributions that
/// are scattered into an accumulator of length `len`, in index order of `i`.
pub fn scatter_sum<F, const K: usize>(mode: Mode, n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> [(usize, f64); K] + Sync + Send,
{
    let per_item = map_indexed(mode, n, f);
    let mut acc = vec![0.0; len];
    for item in &per_item {
        for &(j, v) in item {
            acc[j] += v;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let a = sum_indexed(Mode::Sequential, 10_000, f);
        let b = sum_indexed(Mode::Parallel, 10_000, f);
        assert_eq!(a.to_bits(), b.to_bits());

        let g = |i: usize| [(i % 97, (i as f64).cos()), ((i * 7) % 97, 0.5)];
        let va = scatter_sum(Mode::Sequential, 5_000, 97, g);
        let vb = scatter_sum(Mode::Parallel, 5_000, 97, g);
        for (x, y) in va.iter().zip(&vb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
