//! Per-cluster temporal summaries and the two-class comparison payload.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MaskedSeries;
use crate::stats::{nearest_rank, sort_ascending};

/// Nearest-rank quantiles of the present values at each time step.
/// `None` marks a step where no series is present.
pub fn quantile_bands<S: std::borrow::Borrow<MaskedSeries>>(cluster: &[S], percentiles: &[f64]) -> Vec<Option<Vec<f64>>> {
    let t_len = cluster.first().map_or(0, |s| s.borrow().len());
    (0..t_len)
        .map(|t| {
            let mut present: Vec<f64> = cluster.iter().filter_map(|s| s.borrow().get(t)).collect();
            if present.is_empty() {
                return None;
            }
            sort_ascending(&mut present);
            percentiles.iter().map(|&p| nearest_rank(&present, p)).collect()
        })
        .collect()
}

/// Number of present series at each time step.
pub fn contribution_indicator<S: std::borrow::Borrow<MaskedSeries>>(cluster: &[S]) -> Vec<usize> {
    let t_len = cluster.first().map_or(0, |s| s.borrow().len());
    let mut counts = vec![0; t_len];
    for s in cluster {
        for (c, &m) in counts.iter_mut().zip(s.borrow().mask()) {
            *c += m as usize;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub class_label: usize,
    pub feature_id: usize,
    pub size: usize,
    /// Instance ids in the cluster, ascending by population index.
    pub members: Vec<String>,
    /// First reported time step; bands and counts start here.
    pub t_start: usize,
    pub band_edges: Vec<Option<Vec<f64>>>,
    pub contribution_counts: Vec<usize>,
}

impl ClusterSummary {
    pub fn new(
        cluster_id: usize,
        class_label: usize,
        feature_id: usize,
        members: Vec<String>,
        series: &[&MaskedSeries],
        percentiles: &[f64],
    ) -> Self {
        Self {
            cluster_id,
            class_label,
            feature_id,
            size: series.len(),
            members,
            t_start: 0,
            band_edges: quantile_bands(series, percentiles),
            contribution_counts: contribution_indicator(series),
        }
    }

    /// Restricts to absolute steps `[t0, t1)`, clamped to what is reported.
    pub fn window(&self, t0: usize, t1: usize) -> Self {
        let end = self.t_start + self.band_edges.len();
        let a = t0.clamp(self.t_start, end);
        let b = t1.clamp(a, end);
        let (ra, rb) = (a - self.t_start, b - self.t_start);
        Self {
            t_start: a,
            band_edges: self.band_edges[ra..rb].to_vec(),
            contribution_counts: self.contribution_counts[ra..rb].to_vec(),
            ..self.clone()
        }
    }

    fn value_range(&self) -> Option<(f64, f64)> {
        self.band_edges.iter().flatten().flatten().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

/// Summaries for each cluster of one class, in size-descending order
/// (ties by cluster id).
pub fn summarize_class(
    class_label: usize,
    feature_id: usize,
    clusters: &[Vec<usize>],
    population: &[MaskedSeries],
    ids: &[String],
    percentiles: &[f64],
) -> Vec<ClusterSummary> {
    let mut out: Vec<ClusterSummary> = clusters
        .par_iter()
        .enumerate()
        .map(|(cid, members)| {
            let series: Vec<&MaskedSeries> = members.iter().map(|&i| &population[i]).collect();
            let names = members.iter().map(|&i| ids[i].clone()).collect();
            ClusterSummary::new(cid, class_label, feature_id, names, &series, percentiles)
        })
        .collect();
    sort_by_size(&mut out);
    out
}

fn sort_by_size(s: &mut [ClusterSummary]) {
    s.sort_by(|a, b| b.size.cmp(&a.size).then(a.cluster_id.cmp(&b.cluster_id)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSide {
    pub class_label: usize,
    pub clusters: Vec<ClusterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComparison {
    pub feature_id: usize,
    pub class_a: ClassSide,
    pub class_b: ClassSide,
    /// Shared value axis; `None` when nothing is present in the window.
    pub value_range: Option<(f64, f64)>,
    /// Shared time axis `[t0, t1)`.
    pub time_range: (usize, usize),
}

/// Juxtaposes two classes on shared axes. `temporal_focus` narrows the
/// reported window to `[t0, t1)` without touching the clusters.
pub fn build_comparison(
    feature_id: usize,
    class_a: (usize, &[ClusterSummary]),
    class_b: (usize, &[ClusterSummary]),
    temporal_focus: Option<(usize, usize)>,
) -> Result<ClassComparison> {
    let all = class_a.1.iter().chain(class_b.1);
    if let Some(bad) = all.clone().find(|s| s.feature_id != feature_id) {
        return Err(Error::FeatureMismatch(feature_id, bad.feature_id));
    }
    let t_len = all.clone().map(|s| s.t_start + s.band_edges.len()).max().unwrap_or(0);
    let (t0, t1) = match temporal_focus {
        Some((a, b)) if a >= b || b > t_len => {
            return Err(Error::InvalidParams(format!("temporal focus [{a}, {b}) not inside [0, {t_len})")))
        }
        Some(r) => r,
        None => (0, t_len),
    };
    let side = |(label, s): (usize, &[ClusterSummary])| {
        let mut clusters: Vec<ClusterSummary> = s.iter().map(|c| c.window(t0, t1)).collect();
        sort_by_size(&mut clusters);
        ClassSide { class_label: label, clusters }
    };
    let (a, b) = (side(class_a), side(class_b));
    let value_range = a.clusters.iter().chain(&b.clusters).filter_map(ClusterSummary::value_range).reduce(
        |(lo, hi), (l, h)| (lo.min(l), hi.max(h)),
    );
    Ok(ClassComparison { feature_id, class_a: a, class_b: b, value_range, time_range: (t0, t1) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: [f64; 5] = [10.0, 30.0, 50.0, 70.0, 90.0];

    #[test]
    fn single_instance_bands_are_its_values() {
        let s = MaskedSeries::from_options(&[Some(2.0), None, Some(-1.0)]);
        let b = quantile_bands(&[&s], &P);
        assert_eq!(b, vec![Some(vec![2.0; 5]), None, Some(vec![-1.0; 5])]);
    }

    #[test]
    fn five_values_give_each_rank() {
        let c: Vec<MaskedSeries> = (1..=5).map(|v| MaskedSeries::full(vec![v as f64; 4])).collect();
        for edges in quantile_bands(&c, &P) {
            assert_eq!(edges, Some(vec![1.0, 2.0, 3.0, 4.0, 5.0]));
        }
    }

    #[test]
    fn all_masked_step_is_a_gap() {
        let mut opts = vec![Some(1.0); 9];
        opts[7] = None;
        let c = vec![MaskedSeries::from_options(&opts); 3];
        let b = quantile_bands(&c, &P);
        assert!(b[7].is_none());
        assert!(b.iter().enumerate().all(|(t, e)| t == 7 || e.is_some()));
    }

    #[test]
    fn contribution_counts() {
        let a = MaskedSeries::from_options(&[Some(1.0), None]);
        let b = MaskedSeries::from_options(&[Some(1.0), Some(0.0)]);
        assert_eq!(contribution_indicator(&[a, b]), vec![2, 1]);
        let full = vec![MaskedSeries::full(vec![0.0; 3]); 4];
        assert_eq!(contribution_indicator(&full), vec![4; 3]);
    }

    fn summary(id: usize, size: usize, feature: usize) -> ClusterSummary {
        let series: Vec<MaskedSeries> = (0..size).map(|i| MaskedSeries::full(vec![i as f64; 6])).collect();
        let refs: Vec<&MaskedSeries> = series.iter().collect();
        ClusterSummary::new(id, 0, feature, (0..size).map(|i| i.to_string()).collect(), &refs, &P)
    }

    #[test]
    fn comparison_orders_by_size() {
        let a = [summary(0, 3, 1), summary(1, 50, 1), summary(2, 1, 1)];
        let c = build_comparison(1, (0, &a), (1, &a), None).unwrap();
        let sizes: Vec<usize> = c.class_a.clusters.iter().map(|s| s.size).collect();
        assert_eq!(sizes, vec![50, 3, 1]);
        assert_eq!(c.class_a.clusters, c.class_b.clusters);
        // the axis spans band edges, so the top is the 90th percentile
        assert_eq!(c.value_range, Some((0.0, 44.0)));
        assert_eq!(c.time_range, (0, 6));
    }

    #[test]
    fn feature_mismatch() {
        let a = [summary(0, 3, 1)];
        let b = [summary(0, 3, 2)];
        assert!(matches!(build_comparison(1, (0, &a), (1, &b), None), Err(Error::FeatureMismatch(1, 2))));
    }

    #[test]
    fn focus_window() {
        let a = [summary(0, 3, 1)];
        let c = build_comparison(1, (0, &a), (1, &a), Some((2, 5))).unwrap();
        let s = &c.class_a.clusters[0];
        assert_eq!((s.t_start, s.band_edges.len(), s.contribution_counts.len()), (2, 3, 3));
        assert!(build_comparison(1, (0, &a), (1, &a), Some((4, 9))).is_err());
        assert!(build_comparison(1, (0, &a), (1, &a), Some((3, 3))).is_err());
    }

    fn arb_cluster() -> impl Strategy<Value = Vec<MaskedSeries>> {
        (1usize..8, 1usize..12).prop_flat_map(|(n, t)| {
            prop::collection::vec(
                prop::collection::vec(prop::option::weighted(0.7, -50i32..50), t)
                    .prop_map(|v| MaskedSeries::from_options(&v.iter().map(|x| x.map(f64::from)).collect::<Vec<_>>())),
                n,
            )
        })
    }

    proptest! {
        #[test]
        fn bands_are_monotone_and_defined_where_counted(c in arb_cluster()) {
            let bands = quantile_bands(&c, &P);
            let counts = contribution_indicator(&c);
            for (b, &n) in bands.iter().zip(&counts) {
                prop_assert!(n <= c.len());
                prop_assert_eq!(b.is_some(), n >= 1);
                if let Some(e) = b {
                    prop_assert!(e.windows(2).all(|w| w[0] <= w[1]));
                }
            }
        }

        #[test]
        fn focus_commutes_with_summarizing(c in arb_cluster(), a in 0usize..12, len in 1usize..12) {
            let t = c[0].len();
            let (t0, t1) = (a.min(t - 1), (a.min(t - 1) + len).min(t));
            let refs: Vec<&MaskedSeries> = c.iter().collect();
            let ids: Vec<String> = (0..c.len()).map(|i| i.to_string()).collect();
            let whole = ClusterSummary::new(0, 0, 0, ids.clone(), &refs, &P).window(t0, t1);
            let cut: Vec<MaskedSeries> = c.iter().map(|s| s.window(t0, t1)).collect();
            let cut_refs: Vec<&MaskedSeries> = cut.iter().collect();
            let direct = ClusterSummary::new(0, 0, 0, ids, &cut_refs, &P);
            prop_assert_eq!(whole.band_edges, direct.band_edges);
            prop_assert_eq!(whole.contribution_counts, direct.contribution_counts);
        }
    }
}
