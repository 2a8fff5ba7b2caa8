use std::borrow::Borrow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DistanceNorm, MaskedSeries};

/// L2 distance over positions present in both series, divided by the series
/// length (or by the shared-support size under [`DistanceNorm::SharedSupport`]).
///
/// `Ok(None)` means the series share no present position and are incomparable.
pub fn masked_distance(x: &MaskedSeries, y: &MaskedSeries, norm: DistanceNorm) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    Ok(masked_distance_unchecked(x, y, norm))
}

fn masked_distance_unchecked(x: &MaskedSeries, y: &MaskedSeries, norm: DistanceNorm) -> Option<f64> {
    let mut sum = 0.0;
    let mut shared = 0usize;
    for t in 0..x.len() {
        if let (Some(a), Some(b)) = (x.get(t), y.get(t)) {
            sum += (a - b) * (a - b);
            shared += 1;
        }
    }
    if shared == 0 {
        return None;
    }
    let denom = match norm {
        DistanceNorm::SeriesLength => x.len(),
        DistanceNorm::SharedSupport => shared,
    };
    Some(sum.sqrt() / denom as f64)
}

/// Dense symmetric pairwise distance matrix; incomparable pairs hold `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_series<S: Borrow<MaskedSeries> + Sync>(items: &[S], norm: DistanceNorm) -> Result<Self> {
        if let Some(first) = items.first() {
            let len = first.borrow().len();
            if let Some(bad) = items.iter().map(|s| s.borrow().len()).find(|&l| l != len) {
                return Err(Error::LengthMismatch(len, bad));
            }
        }
        let n = items.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            masked_distance_unchecked(items[i].borrow(), items[j].borrow(), norm)
                                .unwrap_or(f64::INFINITY)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { n, data: rows.concat() })
    }

    /// Builds from a full row-major matrix. Panics unless `data.len() == n * n`.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub(crate) fn into_dense(self) -> Vec<f64> {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(v: &[Option<f64>]) -> MaskedSeries {
        MaskedSeries::from_options(v)
    }

    #[test]
    fn identical_series_are_zero_apart() {
        let x = MaskedSeries::full(vec![1.0, -2.0, 3.5]);
        assert_eq!(masked_distance(&x, &x, DistanceNorm::SeriesLength).unwrap(), Some(0.0));
    }

    #[test]
    fn worked_example() {
        let x = ms(&[Some(1.0), Some(2.0), None]);
        let y = ms(&[Some(1.0), Some(4.0), Some(5.0)]);
        let d = masked_distance(&x, &y, DistanceNorm::SeriesLength).unwrap().unwrap();
        assert!((d - 2.0 / 3.0).abs() <= 1e-15);
        let d = masked_distance(&x, &y, DistanceNorm::SharedSupport).unwrap().unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn no_shared_support_is_incomparable() {
        let x = ms(&[None, None]);
        let y = ms(&[Some(1.0), Some(2.0)]);
        assert_eq!(masked_distance(&x, &y, DistanceNorm::SeriesLength).unwrap(), None);
    }

    #[test]
    fn length_mismatch() {
        let x = MaskedSeries::full(vec![1.0]);
        let y = MaskedSeries::full(vec![1.0, 2.0]);
        assert!(matches!(
            masked_distance(&x, &y, DistanceNorm::SeriesLength),
            Err(Error::LengthMismatch(1, 2))
        ));
        assert!(DistanceMatrix::from_series(&[x, y], DistanceNorm::SeriesLength).is_err());
    }

    fn arb_series(t: usize) -> impl Strategy<Value = MaskedSeries> {
        prop::collection::vec(prop::option::weighted(0.7, -100.0f64..100.0), t)
            .prop_map(|v| MaskedSeries::from_options(&v))
    }

    proptest! {
        #[test]
        fn symmetric(pair in (1usize..12).prop_flat_map(|t| (arb_series(t), arb_series(t)))) {
            let (x, y) = pair;
            for norm in [DistanceNorm::SeriesLength, DistanceNorm::SharedSupport] {
                let a = masked_distance(&x, &y, norm).unwrap();
                let b = masked_distance(&y, &x, norm).unwrap();
                prop_assert_eq!(a, b);
                if let Some(d) = a {
                    prop_assert!(d >= 0.0);
                }
            }
        }
    }
}
