//! Staged analysis: filter and rank, sample, denoise and estimate, cut, summarise.
//!
//! Each stage keeps the parameter subset it was built from. A run reuses a
//! cached stage when its key still matches, so changing a parameter rebuilds
//! exactly the stages downstream of it.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attribution::{aoi_filter, rank_features, score_features, FeatureScore, FilterLevel, MaskedTensor};
use crate::cancel::CancelToken;
use crate::error::{Error, Result};
use crate::model::{AnalysisParams, AttentionTensor, MaskedSeries, SequenceDataset};
use crate::refine::{cut_clusters, denoise_and_estimate, Denoised, GapProfile, NoiseReport, RefineConfig};
use crate::sampling::{stratified_sample, target_size, SamplePlan};
use crate::summarize::{build_comparison, summarize_class, ClassComparison, ClusterSummary};

pub const PAYLOAD_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Filter,
    Sample,
    Denoise,
    Cut,
    Summarize,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Filter, Stage::Sample, Stage::Denoise, Stage::Cut, Stage::Summarize];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::Sample => "sample",
            Stage::Denoise => "denoise",
            Stage::Cut => "cut",
            Stage::Summarize => "summarize",
        }
    }
}

/// How many times each stage has been built for one cache lineage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounts {
    pub filter: u32,
    pub sample: u32,
    pub denoise: u32,
    pub cut: u32,
    pub summarize: u32,
}

impl BuildCounts {
    fn bump(&mut self, s: Stage) {
        match s {
            Stage::Filter => self.filter += 1,
            Stage::Sample => self.sample += 1,
            Stage::Denoise => self.denoise += 1,
            Stage::Cut => self.cut += 1,
            Stage::Summarize => self.summarize += 1,
        }
    }
}

struct Keyed<T> {
    key: String,
    value: Arc<T>,
}

impl<T> Clone for Keyed<T> {
    fn clone(&self) -> Self {
        Self { key: self.key.clone(), value: Arc::clone(&self.value) }
    }
}

pub struct FilterStage {
    pub level: FilterLevel,
    pub masked: MaskedTensor,
}

pub struct SampleStage {
    pub target_size: usize,
    /// One plan per feature; positions index into each class's member list.
    pub plans: Vec<SamplePlan>,
}

/// `[feature][class]`
pub struct DenoiseStage(pub Vec<Vec<Denoised>>);

/// `[feature][class]` clusters of class positions, largest first.
pub struct CutStage(pub Vec<Vec<Vec<Vec<usize>>>>);

/// `[feature][class]`
pub struct SummaryStage(pub Vec<Vec<Vec<ClusterSummary>>>);

/// Cached stage artifacts. Cloning shares the artifacts.
#[derive(Clone, Default)]
pub struct Cache {
    filter: Option<Keyed<FilterStage>>,
    ranking: Option<Keyed<Vec<FeatureScore>>>,
    sample: Option<Keyed<SampleStage>>,
    denoise: Option<Keyed<DenoiseStage>>,
    cut: Option<Keyed<CutStage>>,
    summarize: Option<Keyed<SummaryStage>>,
    pub builds: BuildCounts,
}

fn keys(p: &AnalysisParams) -> [String; 6] {
    let filter = json!([p.aoi, p.attention_level]).to_string();
    let ranking = json!([filter, p.bin_count]).to_string();
    let sample = json!([filter, p.sample_fraction, p.seed, p.distance_norm]).to_string();
    let denoise = json!([
        sample,
        p.noise_level,
        p.smoothing_window,
        p.elbow_rule,
        p.n_ref,
        p.k_max,
        p.reference_aggregate,
        p.k_selection
    ])
    .to_string();
    let cut = json!([denoise, p.cluster_count]).to_string();
    let summarize = json!([cut, p.quantile_edges]).to_string();
    [filter, ranking, sample, denoise, cut, summarize]
}

/// Dataset and attention shared by every run of one bundle.
#[derive(Clone)]
pub struct Pipeline {
    pub dataset: Arc<SequenceDataset>,
    pub attention: Arc<AttentionTensor>,
    /// Global instance indices per class.
    members: Arc<Vec<Vec<usize>>>,
}

impl Pipeline {
    pub fn new(dataset: SequenceDataset, attention: AttentionTensor) -> Self {
        let members = dataset.class_members();
        Self { dataset: Arc::new(dataset), attention: Arc::new(attention), members: Arc::new(members) }
    }

    pub fn class_members(&self) -> &[Vec<usize>] {
        &self.members
    }

    /// Feature ranking under `params` alone, without running the other stages.
    pub fn rank(&self, params: &AnalysisParams) -> Result<Vec<FeatureScore>> {
        params.validate()?;
        let level = FilterLevel::resolve(params.attention_level, &self.attention);
        let masked = aoi_filter(&self.dataset, &self.attention, &params.aoi, level)?;
        Ok(rank_features(score_features(&masked, &self.dataset.features, params.bin_count)?))
    }

    /// Runs every stage for `params`, reusing what `cache` already holds.
    /// `on_stage` is told about each stage as it starts being rebuilt.
    pub fn run(
        &self,
        cache: &Cache,
        params: &AnalysisParams,
        cancel: &CancelToken,
        on_stage: &(dyn Fn(Stage) + Sync),
    ) -> Result<(Cache, AnalysisResult)> {
        params.validate()?;
        let [kf, kr, ks, kd, kc, kx] = keys(params);
        let mut next = Cache { builds: cache.builds, ..Cache::default() };

        let filter = match reuse(&cache.filter, &kf) {
            Some(s) => s,
            None => {
                on_stage(Stage::Filter);
                next.builds.bump(Stage::Filter);
                Keyed { key: kf, value: Arc::new(self.filter(params)?) }
            }
        };
        let ranking = match reuse(&cache.ranking, &kr) {
            Some(s) => s,
            None => {
                let scores = score_features(&filter.value.masked, &self.dataset.features, params.bin_count)?;
                Keyed { key: kr, value: Arc::new(rank_features(scores)) }
            }
        };
        cancel.check()?;
        let sample = match reuse(&cache.sample, &ks) {
            Some(s) => s,
            None => {
                on_stage(Stage::Sample);
                next.builds.bump(Stage::Sample);
                Keyed { key: ks, value: Arc::new(self.sample(&filter.value, params, cancel)?) }
            }
        };
        let denoise = match reuse(&cache.denoise, &kd) {
            Some(s) => s,
            None => {
                on_stage(Stage::Denoise);
                next.builds.bump(Stage::Denoise);
                Keyed { key: kd, value: Arc::new(self.denoise(&filter.value, &sample.value, params, cancel)?) }
            }
        };
        let cut = match reuse(&cache.cut, &kc) {
            Some(s) => s,
            None => {
                on_stage(Stage::Cut);
                next.builds.bump(Stage::Cut);
                Keyed { key: kc, value: Arc::new(self.cut(&denoise.value, params)?) }
            }
        };
        let summarize = match reuse(&cache.summarize, &kx) {
            Some(s) => s,
            None => {
                on_stage(Stage::Summarize);
                next.builds.bump(Stage::Summarize);
                Keyed { key: kx, value: Arc::new(self.summarize(&filter.value, &cut.value, params)) }
            }
        };
        cancel.check()?;

        let result = self.assemble(params, &filter.value, &ranking.value, &sample.value, &denoise.value, &summarize.value);
        next.filter = Some(filter);
        next.ranking = Some(ranking);
        next.sample = Some(sample);
        next.denoise = Some(denoise);
        next.cut = Some(cut);
        next.summarize = Some(summarize);
        Ok((next, result))
    }

    fn filter(&self, params: &AnalysisParams) -> Result<FilterStage> {
        let level = FilterLevel::resolve(params.attention_level, &self.attention);
        let masked = aoi_filter(&self.dataset, &self.attention, &params.aoi, level)?;
        Ok(FilterStage { level, masked })
    }

    fn class_series(&self, masked: &MaskedTensor, feature: usize) -> Vec<Vec<MaskedSeries>> {
        self.members
            .iter()
            .map(|m| m.iter().map(|&i| masked.get(i, feature).clone()).collect())
            .collect()
    }

    fn sample(&self, filter: &FilterStage, params: &AnalysisParams, cancel: &CancelToken) -> Result<SampleStage> {
        let sizes: Vec<usize> = self.members.iter().map(Vec::len).collect();
        let target = target_size(&sizes, params.sample_fraction);
        let plans = (0..self.dataset.feature_count())
            .into_par_iter()
            .map(|f| {
                let classes = self.class_series(&filter.masked, f);
                stratified_sample(&classes, target, params.seed, params.distance_norm, cancel)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleStage { target_size: target, plans })
    }

    fn denoise(
        &self,
        filter: &FilterStage,
        sample: &SampleStage,
        params: &AnalysisParams,
        cancel: &CancelToken,
    ) -> Result<DenoiseStage> {
        let cfg = RefineConfig {
            smoothing_window: params.smoothing_window,
            elbow_rule: params.elbow_rule,
            noise_level: params.noise_level.fixed(),
            n_ref: params.n_ref,
            k_max: params.k_max,
            seed: params.seed,
            norm: params.distance_norm,
            aggregate: params.reference_aggregate,
            selection: params.k_selection,
        };
        let per_feature = (0..self.dataset.feature_count())
            .into_par_iter()
            .map(|f| {
                let classes = self.class_series(&filter.masked, f);
                classes
                    .iter()
                    .zip(&sample.plans[f].classes)
                    .map(|(population, s)| denoise_and_estimate(population, &s.sampled, cfg, cancel))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DenoiseStage(per_feature))
    }

    fn cut(&self, denoise: &DenoiseStage, params: &AnalysisParams) -> Result<CutStage> {
        let fixed = params.cluster_count.fixed();
        let out = denoise
            .0
            .iter()
            .map(|classes| {
                classes
                    .iter()
                    .map(|d| cut_clusters(d, fixed.unwrap_or(d.gap.opt_k)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CutStage(out))
    }

    fn summarize(&self, filter: &FilterStage, cut: &CutStage, params: &AnalysisParams) -> SummaryStage {
        let ids: Vec<String> = self.dataset.instances.iter().map(|i| i.id.clone()).collect();
        let out = (0..self.dataset.feature_count())
            .into_par_iter()
            .map(|f| {
                let classes = self.class_series(&filter.masked, f);
                classes
                    .iter()
                    .enumerate()
                    .map(|(label, population)| {
                        let class_ids: Vec<String> = self.members[label].iter().map(|&i| ids[i].clone()).collect();
                        summarize_class(label, f, &cut.0[f][label], population, &class_ids, &params.quantile_edges)
                    })
                    .collect()
            })
            .collect();
        SummaryStage(out)
    }

    fn assemble(
        &self,
        params: &AnalysisParams,
        filter: &FilterStage,
        ranking: &[FeatureScore],
        sample: &SampleStage,
        denoise: &DenoiseStage,
        summaries: &SummaryStage,
    ) -> AnalysisResult {
        let id = |label: usize, pos: usize| self.dataset.instances[self.members[label][pos]].id.clone();
        let features = self
            .dataset
            .features
            .iter()
            .map(|spec| {
                let f = spec.id;
                let classes = (0..self.members.len())
                    .map(|label| {
                        let d = &denoise.0[f][label];
                        let sampled = &sample.plans[f].classes[label].sampled;
                        ClassResult {
                            class_label: label,
                            class_size: self.members[label].len(),
                            sampled: sampled.iter().map(|&p| id(label, p)).collect(),
                            removed: d.noise.removed.iter().map(|&p| id(label, sampled[p])).collect(),
                            noise: d.noise.clone(),
                            gap: d.gap.clone(),
                            clusters: summaries.0[f][label].clone(),
                        }
                    })
                    .collect();
                FeatureResult { feature_id: f, feature_name: spec.name.clone(), classes }
            })
            .collect();
        AnalysisResult {
            payload_version: PAYLOAD_VERSION.into(),
            params: params.clone(),
            filter_level: filter.level,
            sample_size: sample.target_size,
            ranking: ranking.to_vec(),
            features,
        }
    }
}

fn reuse<T>(slot: &Option<Keyed<T>>, key: &str) -> Option<Keyed<T>> {
    slot.as_ref().filter(|k| k.key == key).cloned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_label: usize,
    pub class_size: usize,
    /// Sampled instance ids.
    pub sampled: Vec<String>,
    /// Sampled instance ids removed as noise.
    pub removed: Vec<String>,
    pub noise: NoiseReport,
    pub gap: GapProfile,
    /// Size-descending.
    pub clusters: Vec<ClusterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureResult {
    pub feature_id: usize,
    pub feature_name: String,
    pub classes: Vec<ClassResult>,
}

/// Everything one parameter set produced, with the parameters echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub payload_version: String,
    pub params: AnalysisParams,
    pub filter_level: FilterLevel,
    pub sample_size: usize,
    pub ranking: Vec<FeatureScore>,
    pub features: Vec<FeatureResult>,
}

/// Summary payload for one feature: the two-class comparison plus each
/// class's noise report and gap profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPayload {
    pub payload_version: String,
    pub params: AnalysisParams,
    pub comparison: ClassComparison,
    pub noise: Vec<NoiseReport>,
    pub gap: Vec<GapProfile>,
}

impl AnalysisResult {
    /// Juxtaposes `classes` (default: the first two) for `feature`.
    pub fn summary(
        &self,
        feature: usize,
        classes: Option<(usize, usize)>,
        temporal_focus: Option<(usize, usize)>,
    ) -> Result<SummaryPayload> {
        let fr = self.features.get(feature).ok_or(Error::UnknownFeature(feature))?;
        let (a, b) = classes.unwrap_or((0, 1));
        let side = |l: usize| {
            fr.classes.get(l).ok_or_else(|| Error::InvalidParams(format!("unknown class {l}")))
        };
        let (ca, cb) = (side(a)?, side(b)?);
        let comparison = build_comparison(feature, (a, &ca.clusters), (b, &cb.clusters), temporal_focus)?;
        Ok(SummaryPayload {
            payload_version: self.payload_version.clone(),
            params: self.params.clone(),
            comparison,
            noise: vec![ca.noise.clone(), cb.noise.clone()],
            gap: vec![ca.gap.clone(), cb.gap.clone()],
        })
    }
}
