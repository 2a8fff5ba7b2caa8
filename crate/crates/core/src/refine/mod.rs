//! Within-class refinement: outlier removal on the merge-distance elbow,
//! cluster-count estimation by an adaptive gap statistic, and the final cut.

mod gap;
mod noise;

pub use gap::{adaptive_reference, dispersion, estimate_k, select_k, GapConfig, GapEntry, GapProfile, Reference};
pub use noise::{noise_reduce, NoiseConfig, NoiseOutcome, NoiseReport};

use crate::cancel::CancelToken;
use crate::clustering::{cut_tree, groups_from_labels, DendrogramLinkage};
use crate::error::Result;
use crate::model::{DistanceNorm, ElbowRule, KSelection, MaskedSeries, ReferenceAggregate};

#[derive(Debug, Clone, Copy)]
pub struct RefineConfig {
    pub smoothing_window: usize,
    pub elbow_rule: ElbowRule,
    pub noise_level: Option<f64>,
    pub n_ref: usize,
    pub k_max: usize,
    pub seed: u64,
    pub norm: DistanceNorm,
    pub aggregate: ReferenceAggregate,
    pub selection: KSelection,
}

/// Denoised sample with its linkage and gap profile, before any cut.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    /// Noise report over positions of the input sample.
    pub noise: NoiseReport,
    /// Population indices of the kept instances, ascending.
    pub kept: Vec<usize>,
    /// Full linkage over `kept` (leaf `i` is `kept[i]`).
    pub linkage: DendrogramLinkage,
    pub gap: GapProfile,
}

/// Noise reduction on `sample` followed by gap estimation on what is kept.
/// References come from the population outside the kept set.
///
/// Samples of fewer than three instances skip noise reduction; a single kept
/// instance or an empty residual yields `opt_k = 1`.
pub fn denoise_and_estimate(
    population: &[MaskedSeries],
    sample: &[usize],
    cfg: RefineConfig,
    cancel: &CancelToken,
) -> Result<Denoised> {
    let sample_series: Vec<&MaskedSeries> = sample.iter().map(|&i| &population[i]).collect();
    let (noise, kept_linkage) = if sample.len() >= 3 {
        let out = noise_reduce(
            &sample_series,
            NoiseConfig {
                smoothing_window: cfg.smoothing_window,
                elbow_rule: cfg.elbow_rule,
                override_level: cfg.noise_level,
                norm: cfg.norm,
            },
            cancel,
        )?;
        let reuse = out.report.removed.is_empty().then_some(out.linkage);
        (out.report, reuse)
    } else {
        let kept = (0..sample.len()).collect();
        (NoiseReport { kept, removed: Vec::new(), elbow_index: None, noise_level: 0.0 }, None)
    };
    let kept: Vec<usize> = noise.kept.iter().map(|&p| sample[p]).collect();
    let kept_series: Vec<&MaskedSeries> = kept.iter().map(|&i| &population[i]).collect();
    let linkage = match kept_linkage {
        Some(l) => l,
        None if kept.is_empty() => DendrogramLinkage { n_leaves: 0, merges: Vec::new() },
        None => gap::full_linkage(&kept_series, cfg.norm, cancel)?,
    };

    let trivial = GapProfile { entries: Vec::new(), skipped: Vec::new(), opt_k: 1, reference_fallback: false };
    let gap = if kept.len() < 2 {
        trivial
    } else {
        let gcfg = GapConfig { n_ref: cfg.n_ref, k_max: cfg.k_max, seed: cfg.seed, norm: cfg.norm, aggregate: cfg.aggregate, selection: cfg.selection };
        match estimate_k(population, &kept, Some(&linkage), gcfg, cancel) {
            Err(crate::Error::EmptyResidual) => {
                tracing::warn!("no residual population for gap references; using a single cluster");
                trivial
            }
            other => other?,
        }
    };
    Ok(Denoised { noise, kept, linkage, gap })
}

/// Cuts the kept set into `k` clusters (clamped to `1..=kept.len()`) and
/// returns population indices per cluster, largest first, ties by smallest member.
pub fn cut_clusters(denoised: &Denoised, k: usize) -> Result<Vec<Vec<usize>>> {
    if denoised.kept.is_empty() {
        return Ok(Vec::new());
    }
    let k = k.clamp(1, denoised.kept.len());
    let labels = cut_tree(&denoised.linkage, k)?;
    let mut groups: Vec<Vec<usize>> = groups_from_labels(&labels)
        .into_iter()
        .map(|g| g.into_iter().map(|leaf| denoised.kept[leaf]).collect())
        .collect();
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(groups)
}

/// Full refinement: denoise, estimate `k`, cut at the estimate or at `cluster_count`.
pub fn refine_clusters(
    population: &[MaskedSeries],
    sample: &[usize],
    cfg: RefineConfig,
    cluster_count: Option<usize>,
    cancel: &CancelToken,
) -> Result<(Denoised, Vec<Vec<usize>>)> {
    let denoised = denoise_and_estimate(population, sample, cfg, cancel)?;
    let clusters = cut_clusters(&denoised, cluster_count.unwrap_or(denoised.gap.opt_k))?;
    Ok((denoised, clusters))
}
