//! Order-fixed parallel sums, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::scalar::Scalar;

pub(crate) const CHUNK: usize = 4096;

/// Sums `f(i)` over `range`, `N` components at a time. Each fixed-size chunk is
/// summed sequentially, then chunk totals are added in index order.
pub(crate) fn sum_indexed<T: Scalar, const N: usize>(
    start: usize,
    end: usize,
    f: impl Fn(usize) -> [T; N] + Sync,
) -> [T; N] {
    if end <= start {
        return [T::zero(); N];
    }
    let chunks = (end - start).div_ceil(CHUNK);
    let partial: Vec<[T; N]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = start + c * CHUNK;
            let hi = (lo + CHUNK).min(end);
            let mut acc = [T::zero(); N];
            for i in lo..hi {
                let v = f(i);
                for k in 0..N {
                    acc[k] = acc[k] + v[k];
                }
            }
            acc
        })
        .collect();
    let mut total = [T::zero(); N];
    for p in partial {
        for k in 0..N {
            total[k] = total[k] + p[k];
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_sequential_sum_of_integers() {
        let [s, c] = sum_indexed::<f64, 2>(3, 10_000, |i| [i as f64, 1.0]);
        assert_eq!(s, (3..10_000).map(|i| i as f64).sum::<f64>());
        assert_eq!(c, 9997.0);
        assert_eq!(sum_indexed::<f64, 1>(5, 5, |_| [1.0]), [0.0]);
    }
}
