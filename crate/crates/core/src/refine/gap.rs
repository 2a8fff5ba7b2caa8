//! Gap statistic with references drawn from the unsampled residual population.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cancel::CancelToken;
use crate::clustering::{cut_tree, hac_from_matrix, DendrogramLinkage, DistanceMatrix};
use crate::error::{Error, Result};
use crate::model::{DistanceNorm, KSelection, MaskedSeries, ReferenceAggregate};
use crate::rng::stream_rng;
use crate::stats::population_variance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub k: usize,
    pub w_log: f64,
    pub w_ref_log: f64,
    pub gap: f64,
    /// Population standard deviation of the reference log-dispersions.
    pub w_ref_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapProfile {
    pub entries: Vec<GapEntry>,
    /// Values of `k` whose clustering had zero total dispersion.
    pub skipped: Vec<usize>,
    pub opt_k: usize,
    /// References had to be drawn with replacement.
    pub reference_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    /// Population indices.
    pub members: Vec<usize>,
    pub with_replacement: bool,
}

/// Draws `sample.len()` population indices outside `sample`, uniformly and
/// without replacement. A residual smaller than the sample falls back to
/// drawing with replacement; an empty residual is an error.
pub fn adaptive_reference<R: Rng>(population: usize, sample: &[usize], rng: &mut R) -> Result<Reference> {
    let mut in_sample = vec![false; population];
    for &i in sample {
        in_sample[i] = true;
    }
    let residual: Vec<usize> = (0..population).filter(|&i| !in_sample[i]).collect();
    let want = sample.len();
    if residual.is_empty() {
        return Err(Error::EmptyResidual);
    }
    if residual.len() >= want {
        let mut members: Vec<usize> = index::sample(rng, residual.len(), want)
            .into_iter()
            .map(|p| residual[p])
            .collect();
        members.sort_unstable();
        Ok(Reference { members, with_replacement: false })
    } else {
        tracing::warn!(residual = residual.len(), want, "residual smaller than sample; drawing references with replacement");
        let mut members: Vec<usize> = (0..want)
            .map(|_| residual[rng.random_range(0..residual.len())])
            .collect();
        members.sort_unstable();
        Ok(Reference { members, with_replacement: true })
    }
}

/// Total within-cluster squared deviation. Centroids are per-position means
/// over the members present there; absent positions contribute nothing.
pub fn dispersion(series: &[&MaskedSeries], labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let t_len = series.first().map_or(0, |s| s.len());
    let mut sums = vec![0.0; k * t_len];
    let mut counts = vec![0usize; k * t_len];
    for (s, &l) in series.iter().zip(labels) {
        for t in 0..t_len {
            if let Some(v) = s.get(t) {
                sums[l * t_len + t] += v;
                counts[l * t_len + t] += 1;
            }
        }
    }
    let mut total = 0.0;
    for (s, &l) in series.iter().zip(labels) {
        for t in 0..t_len {
            if let Some(v) = s.get(t) {
                let mu = sums[l * t_len + t] / counts[l * t_len + t] as f64;
                total += (v - mu) * (v - mu);
            }
        }
    }
    total
}

#[derive(Debug, Clone, Copy)]
pub struct GapConfig {
    pub n_ref: usize,
    pub k_max: usize,
    pub seed: u64,
    pub norm: DistanceNorm,
    pub aggregate: ReferenceAggregate,
    pub selection: KSelection,
}

/// Estimates the cluster count of `sample` (population indices) by the gap
/// between reference and sample log-dispersion, for `k = 1..=k_max`.
///
/// `sample_linkage` may pass in an already computed full linkage of the sample.
pub fn estimate_k(
    population: &[MaskedSeries],
    sample: &[usize],
    sample_linkage: Option<&DendrogramLinkage>,
    cfg: GapConfig,
    cancel: &CancelToken,
) -> Result<GapProfile> {
    if sample.len() < 2 {
        return Err(Error::TooFewInstances(sample.len()));
    }
    if cfg.k_max == 0 || cfg.n_ref == 0 {
        return Err(Error::InvalidParams("k_max and n_ref must be positive".into()));
    }
    let k_top = cfg.k_max.min(sample.len());
    let sample_series: Vec<&MaskedSeries> = sample.iter().map(|&i| &population[i]).collect();
    let owned;
    let linkage = match sample_linkage {
        Some(l) => l,
        None => {
            owned = full_linkage(&sample_series, cfg.norm, cancel)?;
            &owned
        }
    };

    let references = (0..cfg.n_ref)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, 0x6761_7000 + r as u64);
            let reference = adaptive_reference(population.len(), sample, &mut rng)?;
            let series: Vec<&MaskedSeries> = reference.members.iter().map(|&i| &population[i]).collect();
            let linkage = full_linkage(&series, cfg.norm, cancel)?;
            let logs = (1..=k_top)
                .map(|k| Ok(dispersion(&series, &cut_tree(&linkage, k)?)))
                .collect::<Result<Vec<f64>>>()?;
            Ok((logs, reference.with_replacement))
        })
        .collect::<Result<Vec<_>>>()?;
    let reference_fallback = references.iter().any(|(_, f)| *f);

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for k in 1..=k_top {
        cancel.check()?;
        let w = dispersion(&sample_series, &cut_tree(linkage, k)?);
        let ref_w: Vec<f64> = references.iter().map(|(w, _)| w[k - 1]).collect();
        if w <= 0.0 || ref_w.iter().any(|&x| x <= 0.0) {
            skipped.push(k);
            continue;
        }
        let logs: Vec<f64> = ref_w.iter().map(|x| x.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let w_ref_log = match cfg.aggregate {
            ReferenceAggregate::Mean => mean,
            ReferenceAggregate::Sum => logs.iter().sum::<f64>(),
        };
        let w_ref_sd = population_variance(&logs).sqrt();
        let w_log = w.ln();
        entries.push(GapEntry { k, w_log, w_ref_log, gap: w_ref_log - w_log, w_ref_sd });
    }

    let opt_k = select_k(&entries, cfg.selection, cfg.n_ref);
    Ok(GapProfile { entries, skipped, opt_k, reference_fallback })
}

/// Reads the cluster count off evaluated entries; `1` when none were evaluated.
pub fn select_k(entries: &[GapEntry], rule: KSelection, n_ref: usize) -> usize {
    match rule {
        KSelection::Argmax => entries
            .iter()
            .fold(None::<&GapEntry>, |best, e| match best {
                Some(b) if b.gap >= e.gap => Some(b),
                _ => Some(e),
            })
            .map_or(1, |e| e.k),
        KSelection::OneStandardError => {
            let scale = (1.0 + 1.0 / n_ref as f64).sqrt();
            entries
                .windows(2)
                .find(|w| w[0].gap >= w[1].gap - w[1].w_ref_sd * scale)
                .map(|w| w[0].k)
                .or_else(|| entries.last().map(|e| e.k))
                .unwrap_or(1)
        }
    }
}

pub(crate) fn full_linkage(series: &[&MaskedSeries], norm: DistanceNorm, cancel: &CancelToken) -> Result<DendrogramLinkage> {
    let matrix = DistanceMatrix::from_series(series, norm)?;
    Ok(hac_from_matrix(matrix, 1, cancel)?.linkage)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k_max: usize) -> GapConfig {
        GapConfig { n_ref: 3, k_max, seed: 7, norm: DistanceNorm::SeriesLength, aggregate: ReferenceAggregate::Mean, selection: KSelection::OneStandardError }
    }

    fn entry(k: usize, gap: f64, sd: f64) -> GapEntry {
        GapEntry { k, w_log: 0.0, w_ref_log: gap, gap, w_ref_sd: sd }
    }

    #[test]
    fn selection_rules() {
        let e = [entry(1, 0.0, 0.1), entry(2, 1.0, 0.1), entry(3, 1.05, 0.1), entry(4, 2.0, 0.1)];
        assert_eq!(select_k(&e, KSelection::Argmax, 3), 4);
        // 1.0 >= 1.05 - 0.1 * sqrt(4/3): stops at 2
        assert_eq!(select_k(&e, KSelection::OneStandardError, 3), 2);
        let rising = [entry(1, 0.0, 0.0), entry(2, 1.0, 0.0)];
        assert_eq!(select_k(&rising, KSelection::OneStandardError, 3), 2);
        assert_eq!(select_k(&[], KSelection::OneStandardError, 3), 1);
        let tie = [entry(1, 1.0, 0.0), entry(2, 1.0, 0.0)];
        assert_eq!(select_k(&tie, KSelection::Argmax, 3), 1);
    }

    #[test]
    fn reference_is_the_residual_when_sizes_match() {
        let mut rng = stream_rng(1, 0);
        let r = adaptive_reference(6, &[0, 2, 4], &mut rng).unwrap();
        assert_eq!(r.members, vec![1, 3, 5]);
        assert!(!r.with_replacement);
    }

    #[test]
    fn reference_is_seeded() {
        let a = adaptive_reference(100, &[1, 2, 3, 50], &mut stream_rng(9, 3)).unwrap();
        let b = adaptive_reference(100, &[1, 2, 3, 50], &mut stream_rng(9, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_residual_falls_back_to_replacement() {
        let r = adaptive_reference(5, &[0, 1, 2], &mut stream_rng(1, 0)).unwrap();
        assert!(r.with_replacement);
        assert_eq!(r.members.len(), 3);
        assert!(r.members.iter().all(|&m| m == 3 || m == 4));
        assert!(matches!(adaptive_reference(2, &[0, 1], &mut stream_rng(1, 0)), Err(Error::EmptyResidual)));
    }

    #[test]
    fn dispersion_ignores_absent_positions() {
        let a = MaskedSeries::from_options(&[Some(1.0), None]);
        let b = MaskedSeries::from_options(&[Some(3.0), Some(5.0)]);
        // position 0: mean 2, deviations 1 + 1; position 1: single value
        assert_eq!(dispersion(&[&a, &b], &[0, 0]), 2.0);
        assert_eq!(dispersion(&[&a, &b], &[0, 1]), 0.0);
    }

    #[test]
    fn single_candidate_k() {
        let pop: Vec<MaskedSeries> = (0..10).map(|i| MaskedSeries::full(vec![i as f64, (i * i) as f64])).collect();
        let g = estimate_k(&pop, &[0, 1, 2, 3, 4], None, cfg(1), &CancelToken::new()).unwrap();
        assert_eq!(g.opt_k, 1);
        assert_eq!(g.entries.len(), 1);
    }

    #[test]
    fn zero_dispersion_k_is_skipped() {
        let pop: Vec<MaskedSeries> = (0..8).map(|i| MaskedSeries::full(vec![i as f64])).collect();
        let g = estimate_k(&pop, &[0, 1, 2, 3], None, cfg(10), &CancelToken::new()).unwrap();
        assert_eq!(g.skipped, vec![4]);
        assert_eq!(g.entries.len(), 3);
    }
}
