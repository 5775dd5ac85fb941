//! Deterministic pairwise accumulation.
//!
//! The reduction tree depends only on the number of terms, so serial and
//! parallel evaluation give bit-identical results. Split points are even, which
//! keeps antithetic pairs `(2i, 2i + 1)` inside the same leaf.

use crate::scalar::Scalar;

const LEAF: usize = 16;
const PARALLEL_ABOVE: usize = 2048;

/// Sums per-term contributions of width `width`; `add(i, acc)` adds term `i` into `acc`.
pub(crate) fn pairwise<T, F>(len: usize, width: usize, add: &F) -> Vec<T>
where
    T: Scalar,
    F: Fn(usize, &mut [T]) + Sync,
{
    reduce(0, len, width, add)
}

fn reduce<T, F>(lo: usize, hi: usize, width: usize, add: &F) -> Vec<T>
where
    T: Scalar,
    F: Fn(usize, &mut [T]) + Sync,
{
    if hi - lo <= LEAF {
        let mut acc = vec![T::zero(); width];
        for i in lo..hi {
            add(i, &mut acc);
        }
        return acc;
    }
    let mid = lo + ((hi - lo) / 2 & !1);
    let (mut left, right) = if hi - lo > PARALLEL_ABOVE {
        rayon::join(|| reduce(lo, mid, width, add), || reduce(mid, hi, width, add))
    } else {
        (reduce(lo, mid, width, add), reduce(mid, hi, width, add))
    };
    for (l, r) in left.iter_mut().zip(right) {
        *l += r;
    }
    left
}

/// Pairwise sum of a slice of scalars.
pub(crate) fn sum_slice<T: Scalar>(values: &[T]) -> T {
    pairwise(values.len(), 1, &|i, acc: &mut [T]| acc[0] += values[i])[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_exact_sum_of_integers() {
        let v: Vec<f64> = (0..100_003).map(|i| i as f64).collect();
        assert_eq!(sum_slice(&v), 100_002.0 * 100_003.0 / 2.0);
    }

    #[test]
    fn mirrored_pairs_cancel_exactly() {
        let v: Vec<f64> = (0..5000).map(|i| if i % 2 == 0 { (i as f64).sin() * 1e3 } else { -((i - 1) as f64).sin() * 1e3 }).collect();
        assert_eq!(sum_slice(&v), 0.0);
    }

    #[test]
    fn width_accumulates_independently() {
        let out: Vec<f64> = pairwise(10, 2, &|i, acc: &mut [f64]| {
            acc[0] += 1.0;
            acc[1] += i as f64;
        });
        assert_eq!(out, vec![10.0, 45.0]);
    }
}
