//! Fixed-shape reductions over observations.
//!
//! Rows are cut into blocks of [`BLOCK`] observations. Each block is summed
//! sequentially left to right and the block partials are then added in block
//! order. The shape depends only on `n`, so results are bitwise reproducible
//! whether the blocks run on one thread or many, and for `n <= BLOCK` they are
//! exactly the plain sequential sum.

use rayon::prelude::*;

pub const BLOCK: usize = 4096;

/// Below this many rows the blocks are evaluated on the calling thread.
const PAR_MIN_ROWS: usize = 4 * BLOCK;

fn block_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(BLOCK))
        .map(|b| (b * BLOCK, ((b + 1) * BLOCK).min(n)))
        .collect()
}

/// Sum of `term(i)` over `0..n`.
pub fn sum<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partial = |(lo, hi): (usize, usize)| (lo..hi).fold(0.0, |acc, i| acc + term(i));
    let ranges = block_ranges(n);
    let partials: Vec<f64> = if n >= PAR_MIN_ROWS {
        ranges.into_par_iter().map(partial).collect()
    } else {
        ranges.into_iter().map(partial).collect()
    };
    partials.into_iter().fold(0.0, |acc, s| acc + s)
}

/// Vector-valued sum: `accumulate(lo, hi, acc)` must add the terms of rows
/// `lo..hi` into `acc` in increasing row order.
pub fn sum_vec<F>(n: usize, dim: usize, accumulate: F) -> Vec<f64>
where
    F: Fn(usize, usize, &mut [f64]) + Sync,
{
    let partial = |(lo, hi): (usize, usize)| {
        let mut acc = vec![0.0; dim];
        accumulate(lo, hi, &mut acc);
        acc
    };
    let ranges = block_ranges(n);
    let partials: Vec<Vec<f64>> = if n >= PAR_MIN_ROWS {
        ranges.into_par_iter().map(partial).collect()
    } else {
        ranges.into_iter().map(partial).collect()
    };
    let mut total = vec![0.0; dim];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sums_match_sequential_bitwise() {
        let terms: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let seq = terms.iter().fold(0.0, |a, t| a + t);
        assert_eq!(sum(terms.len(), |i| terms[i]).to_bits(), seq.to_bits());
    }

    #[test]
    fn large_sums_are_reproducible_across_pool_sizes() {
        let n = 50_000;
        let terms: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sum(n, |i| terms[i]));
        let b = four.install(|| sum(n, |i| terms[i]));
        assert_eq!(a.to_bits(), b.to_bits());
        let va = one.install(|| {
            sum_vec(n, 2, |lo, hi, acc| {
                for i in lo..hi {
                    acc[0] += terms[i];
                    acc[1] -= terms[i] * 2.0;
                }
            })
        });
        let vb = four.install(|| {
            sum_vec(n, 2, |lo, hi, acc| {
                for i in lo..hi {
                    acc[0] += terms[i];
                    acc[1] -= terms[i] * 2.0;
                }
            })
        });
        assert_eq!(va, vb);
        assert_eq!(va[0].to_bits(), a.to_bits());
    }
}
