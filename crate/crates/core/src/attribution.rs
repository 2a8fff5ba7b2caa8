//! Feature contribution scoring, attention distributions and attention-range masking.
//!
//! A feature's score is the product of two terms computed over the values that
//! survive attention filtering: the mean bin occupancy of an `M`-bin histogram
//! over the feature's declared range, and the population variance of the values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AttentionLevel, AttentionMode, AttentionRange, AttentionTensor, FeatureSpec, MaskedSeries,
    SequenceDataset,
};
use crate::stats;

/// Attention signal resolved against what the tensor actually carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterLevel {
    Event,
    Feature,
}

impl FilterLevel {
    pub fn resolve(level: AttentionLevel, attention: &AttentionTensor) -> Self {
        match level {
            AttentionLevel::Event => FilterLevel::Event,
            AttentionLevel::Feature => FilterLevel::Feature,
            AttentionLevel::Auto if attention.has_feature_level() => FilterLevel::Feature,
            AttentionLevel::Auto => FilterLevel::Event,
        }
    }
}

/// Per-instance, per-feature masked series after attention filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTensor {
    /// Indexed `[instance][feature]`.
    pub series: Vec<Vec<MaskedSeries>>,
}

impl MaskedTensor {
    pub fn get(&self, instance: usize, feature: usize) -> &MaskedSeries {
        &self.series[instance][feature]
    }

    pub fn feature_values(&self, feature: usize) -> Vec<f64> {
        self.series
            .iter()
            .flat_map(|row| row[feature].present_values())
            .collect()
    }
}

/// Masks every position whose governing attention weight lies outside all
/// `aoi` subranges. Values are copied unchanged; nothing is zero-filled.
pub fn aoi_filter(
    dataset: &SequenceDataset,
    attention: &AttentionTensor,
    aoi: &[AttentionRange],
    level: FilterLevel,
) -> Result<MaskedTensor> {
    if aoi.is_empty() {
        return Err(Error::InvalidParams("aoi must not be empty".into()));
    }
    let feature_att = match level {
        FilterLevel::Feature => Some(
            attention
                .feature_level
                .as_ref()
                .ok_or(Error::FeatureAttentionMissing)?,
        ),
        FilterLevel::Event => None,
    };
    let in_aoi = |a: f64| aoi.iter().any(|r| r.contains(a));
    let t_len = dataset.time_steps;
    let f_len = dataset.feature_count();

    let series = dataset
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            (0..f_len)
                .map(|f| {
                    let mut values = Vec::with_capacity(t_len);
                    let mut mask = Vec::with_capacity(t_len);
                    for t in 0..t_len {
                        let a = match feature_att {
                            Some(fa) => fa[i][t * f_len + f],
                            None => attention.event_level[i][t],
                        };
                        values.push(inst.values[t * f_len + f]);
                        mask.push(in_aoi(a));
                    }
                    MaskedSeries::new(values, mask)
                })
                .collect()
        })
        .collect();
    Ok(MaskedTensor { series })
}

/// The attention range holding the top `fraction` of event-level weights,
/// i.e. `[q, 1]` where `q` is the nearest-rank `(1 - fraction)` percentile.
pub fn top_fraction_range(attention: &AttentionTensor, fraction: f64) -> AttentionRange {
    let mut all: Vec<f64> = attention.event_level.iter().flatten().copied().collect();
    stats::sort_ascending(&mut all);
    let p = (1.0 - fraction) * 100.0;
    match stats::nearest_rank(&all, p) {
        Some(q) if p > 0.0 => {
            // first value strictly above the percentile
            let cut = all.iter().copied().find(|&a| a > q).unwrap_or(1.0);
            AttentionRange::new(cut, 1.0)
        }
        _ => AttentionRange::FULL,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentilePoint {
    pub percentile: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDistribution {
    pub mode: AttentionMode,
    pub bins: Vec<HistogramBin>,
    pub percentiles: Vec<PercentilePoint>,
}

pub const ATTENTION_BINS: usize = 10;

pub fn default_percentiles() -> Vec<f64> {
    (0..=10).map(|i| (i * 10) as f64).collect()
}

/// Distribution of event-level attention: ten 0.1-wide bins, or the
/// nearest-rank attention value at each requested percentile.
pub fn attention_distribution(
    attention: &AttentionTensor,
    mode: AttentionMode,
    percentiles: &[f64],
) -> AttentionDistribution {
    let all = attention.event_level.iter().flatten().copied();
    match mode {
        AttentionMode::Histogram => {
            let mut counts = vec![0usize; ATTENTION_BINS];
            for a in all {
                counts[bin_index(a, 0.0, 1.0, ATTENTION_BINS)] += 1;
            }
            let bins = counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| HistogramBin {
                    lo: bin_edge(0.0, 1.0, ATTENTION_BINS, i),
                    hi: bin_edge(0.0, 1.0, ATTENTION_BINS, i + 1),
                    count,
                })
                .collect();
            AttentionDistribution { mode, bins, percentiles: Vec::new() }
        }
        AttentionMode::Percentile => {
            let mut sorted: Vec<f64> = all.collect();
            stats::sort_ascending(&mut sorted);
            let percentiles = percentiles
                .iter()
                .filter_map(|&p| {
                    stats::nearest_rank(&sorted, p).map(|value| PercentilePoint { percentile: p, value })
                })
                .collect();
            AttentionDistribution { mode, bins: Vec::new(), percentiles }
        }
    }
}

#[inline]
fn bin_edge(lo: f64, hi: f64, m: usize, i: usize) -> f64 {
    if i == m {
        hi
    } else {
        lo + (hi - lo) * i as f64 / m as f64
    }
}

/// Equal-width bin index over `[lo, hi]` with the last bin right-closed.
/// Out-of-range values clamp to the end bins.
fn bin_index(v: f64, lo: f64, hi: f64, m: usize) -> usize {
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return 0;
    }
    let mut idx = (((v - lo) / (hi - lo)) * m as f64).floor();
    if !idx.is_finite() || idx < 0.0 {
        idx = 0.0;
    }
    let mut idx = (idx as usize).min(m - 1);
    // settle against the exact edges so refinements agree on boundary values
    while idx > 0 && v < bin_edge(lo, hi, m, idx) {
        idx -= 1;
    }
    while idx + 1 < m && v >= bin_edge(lo, hi, m, idx + 1) {
        idx += 1;
    }
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub counts: Vec<usize>,
    /// Set when `value_min == value_max`; every value then sits in bin 0.
    pub degenerate_range: bool,
}

/// Counts values into `m` equal-width bins over the feature's declared range.
pub fn bin_values(values: &[f64], spec: &FeatureSpec, m: usize) -> Result<Binning> {
    if m == 0 {
        return Err(Error::InvalidParams("bin count must be positive".into()));
    }
    let mut counts = vec![0usize; m];
    let degenerate_range = spec.value_min == spec.value_max;
    for &v in values {
        counts[bin_index(v, spec.value_min, spec.value_max, m)] += 1;
    }
    Ok(Binning { counts, degenerate_range })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature_id: usize,
    pub score: f64,
    pub c_term: f64,
    pub v_term: f64,
    pub n_contributing: usize,
}

/// Scores one feature from its surviving (non-null) values.
pub fn contribution_score(values: &[f64], spec: &FeatureSpec, m: usize) -> Result<FeatureScore> {
    let binning = bin_values(values, spec, m)?;
    let c_term = binning.counts.iter().sum::<usize>() as f64 / m as f64;
    let v_term = stats::population_variance(values);
    Ok(FeatureScore {
        feature_id: spec.id,
        score: c_term * v_term,
        c_term,
        v_term,
        n_contributing: values.len(),
    })
}

/// Scores every feature on the union of all classes' filtered values.
pub fn score_features(
    masked: &MaskedTensor,
    features: &[FeatureSpec],
    m: usize,
) -> Result<Vec<FeatureScore>> {
    features
        .par_iter()
        .map(|spec| contribution_score(&masked.feature_values(spec.id), spec, m))
        .collect()
}

/// Descending by score, ties by ascending feature id.
pub fn rank_features(mut scores: Vec<FeatureScore>) -> Vec<FeatureScore> {
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.feature_id.cmp(&b.feature_id))
    });
    scores
}
