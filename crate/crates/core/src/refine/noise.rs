use serde::{Deserialize, Serialize};

use crate::cancel::CancelToken;
use crate::clustering::{distance_curve, hac_from_matrix, DendrogramLinkage, DistanceCurve, DistanceMatrix};
use crate::error::{Error, Result};
use crate::model::{DistanceNorm, ElbowRule, MaskedSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    /// Positions into the denoised input, ascending.
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    /// Merge index used as the cut; `None` when no elbow could be formed.
    pub elbow_index: Option<usize>,
    /// `removed / (kept + removed)`.
    pub noise_level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub smoothing_window: usize,
    pub elbow_rule: ElbowRule,
    /// Requested removed share in `[0, 1]`, replacing the elbow.
    pub override_level: Option<f64>,
    pub norm: DistanceNorm,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { smoothing_window: 1, elbow_rule: ElbowRule::Convex, override_level: None, norm: DistanceNorm::SeriesLength }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOutcome {
    pub report: NoiseReport,
    pub linkage: DendrogramLinkage,
    pub curve: DistanceCurve,
}

/// Removes the leaves that first join the dendrogram after the elbow of the
/// merge-distance curve.
///
/// With an override level, the cut is moved to the merge whose removed share is
/// closest to the requested level (ties keep more instances).
pub fn noise_reduce<S: std::borrow::Borrow<MaskedSeries> + Sync>(
    sample: &[S],
    cfg: NoiseConfig,
    cancel: &CancelToken,
) -> Result<NoiseOutcome> {
    if sample.len() < 3 {
        return Err(Error::TooFewInstances(sample.len()));
    }
    let matrix = DistanceMatrix::from_series(sample, cfg.norm)?;
    let run = hac_from_matrix(matrix, 1, cancel)?;
    let curve = distance_curve(&run.linkage, cfg.smoothing_window, cfg.elbow_rule);
    let report = report_for(&run.linkage, &curve, cfg.override_level);
    Ok(NoiseOutcome { report, linkage: run.linkage, curve })
}

fn report_for(linkage: &DendrogramLinkage, curve: &DistanceCurve, override_level: Option<f64>) -> NoiseReport {
    let n = linkage.n_leaves;
    let first = linkage.first_merge_of_leaf();
    let removed_after = |cut: usize| first.iter().filter(|m| m.is_none_or(|k| k > cut)).count();

    let elbow_index = match override_level {
        Some(level) => {
            let mut best: Option<(f64, usize)> = None;
            for cut in 0..linkage.merges.len() {
                let gap = (removed_after(cut) as f64 / n as f64 - level).abs();
                // later cuts remove no more, so `<=` prefers keeping instances
                if best.is_none_or(|(g, _)| gap <= g) {
                    best = Some((gap, cut));
                }
            }
            best.map(|(_, cut)| cut)
        }
        None => curve.elbow_index,
    };

    let (kept, removed): (Vec<usize>, Vec<usize>) = match elbow_index {
        Some(cut) => (0..n).partition(|&leaf| first[leaf].is_some_and(|k| k <= cut)),
        None => ((0..n).collect(), Vec::new()),
    };
    let noise_level = removed.len() as f64 / n as f64;
    NoiseReport { kept, removed, elbow_index, noise_level }
}
