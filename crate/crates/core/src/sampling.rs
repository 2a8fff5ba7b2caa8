//! Class-stratified sampling through truncated single-link HAC.
//!
//! Each class is clustered independently until `S` clusters remain; one
//! member drawn uniformly from each cluster forms the class sample, so every
//! class contributes the same number of representative instances.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cancel::CancelToken;
use crate::clustering::{hac_from_matrix, DistanceMatrix};
use crate::error::Result;
use crate::model::{DistanceNorm, MaskedSeries};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSample {
    pub label: usize,
    /// One position (into the class's input list) per active cluster, in
    /// cluster order (clusters ordered by smallest member).
    pub sampled: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub target_size: usize,
    pub seed: u64,
    pub classes: Vec<ClassSample>,
}

/// Sample size for `fraction` of the smallest class, at least one.
pub fn target_size(class_sizes: &[usize], fraction: f64) -> usize {
    let smallest = class_sizes.iter().copied().min().unwrap_or(0);
    ((smallest as f64 * fraction).round() as usize).max(1)
}

/// Samples one instance per sub-cluster for every class. `classes[label]`
/// holds that class's series; empty classes yield empty samples.
pub fn stratified_sample(
    classes: &[Vec<MaskedSeries>],
    target: usize,
    seed: u64,
    norm: DistanceNorm,
    cancel: &CancelToken,
) -> Result<SamplePlan> {
    let target = target.max(1);
    let classes = classes
        .par_iter()
        .enumerate()
        .map(|(label, series)| sample_class(label, series, target, seed, norm, cancel))
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplePlan { target_size: target, seed, classes })
}

fn sample_class(
    label: usize,
    series: &[MaskedSeries],
    target: usize,
    seed: u64,
    norm: DistanceNorm,
    cancel: &CancelToken,
) -> Result<ClassSample> {
    if series.len() <= target {
        if series.len() < target {
            tracing::info!(label, size = series.len(), target, "class smaller than sample size; taking every instance");
        }
        return Ok(ClassSample { label, sampled: (0..series.len()).collect() });
    }
    let matrix = DistanceMatrix::from_series(series, norm)?;
    let run = hac_from_matrix(matrix, target, cancel)?;
    let mut rng = stream_rng(seed, label as u64);
    let sampled = run
        .clusters
        .iter()
        .map(|members| members[rng.random_range(0..members.len())])
        .collect();
    Ok(ClassSample { label, sampled })
}
