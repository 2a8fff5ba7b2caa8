//! Shared data model: datasets, attention, masked series and analysis parameters.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Numeric,
    /// Categorical values already coded as numbers by the producer.
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: usize,
    pub name: String,
    pub value_min: f64,
    pub value_max: f64,
    #[serde(default)]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.value_min && v <= self.value_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub label: usize,
    /// Row-major `T x F` values.
    pub values: Vec<f64>,
    pub attributes: BTreeMap<String, String>,
    pub embedding: Option<[f64; 2]>,
}

/// Instances x time x features, with one class label per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDataset {
    pub time_steps: usize,
    pub class_count: usize,
    pub features: Vec<FeatureSpec>,
    pub instances: Vec<InstanceRecord>,
}

impl SequenceDataset {
    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    #[inline]
    pub fn value(&self, instance: usize, t: usize, f: usize) -> f64 {
        self.instances[instance].values[t * self.features.len() + f]
    }

    /// Values of feature `f` over time for one instance.
    pub fn feature_series(&self, instance: usize, f: usize) -> Vec<f64> {
        (0..self.time_steps)
            .map(|t| self.value(instance, t, f))
            .collect()
    }

    /// Instance indices grouped by class label.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, inst) in self.instances.iter().enumerate() {
            if inst.label < self.class_count {
                out[inst.label].push(i);
            }
        }
        out
    }

    pub fn has_embedding(&self) -> bool {
        !self.instances.is_empty() && self.instances.iter().all(|i| i.embedding.is_some())
    }
}

/// Per-event (and optionally per-feature) attention weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTensor {
    /// One `T`-length vector per instance.
    pub event_level: Vec<Vec<f64>>,
    /// Optional row-major `T x F` matrix per instance.
    pub feature_level: Option<Vec<Vec<f64>>>,
}

impl AttentionTensor {
    pub fn has_feature_level(&self) -> bool {
        self.feature_level.is_some()
    }
}

/// A time series whose absent positions are explicit rather than zero-padded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSeries {
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl MaskedSeries {
    /// Panics if the lengths differ.
    pub fn new(values: Vec<f64>, mask: Vec<bool>) -> Self {
        assert_eq!(values.len(), mask.len(), "values and mask length differ");
        let values = values
            .into_iter()
            .zip(&mask)
            .map(|(v, &m)| if m { v } else { 0.0 })
            .collect();
        Self { values, mask }
    }

    pub fn full(values: Vec<f64>) -> Self {
        let mask = vec![true; values.len()];
        Self { values, mask }
    }

    pub fn from_options(values: &[Option<f64>]) -> Self {
        Self {
            values: values.iter().map(|v| v.unwrap_or(0.0)).collect(),
            mask: values.iter().map(Option::is_some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    #[inline]
    pub fn get(&self, t: usize) -> Option<f64> {
        if self.mask[t] {
            Some(self.values[t])
        } else {
            None
        }
    }

    #[inline]
    pub fn is_present(&self, t: usize) -> bool {
        self.mask[t]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn present_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn present_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .filter_map(|(&v, &m)| m.then_some(v))
    }

    pub fn to_options(&self) -> Vec<Option<f64>> {
        (0..self.len()).map(|t| self.get(t)).collect()
    }

    /// Restricts the series to `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> MaskedSeries {
        MaskedSeries {
            values: self.values[start..end].to_vec(),
            mask: self.mask[start..end].to_vec(),
        }
    }

    /// Adds `offset` to every present value.
    pub fn translated(&self, offset: f64) -> MaskedSeries {
        MaskedSeries {
            values: self
                .values
                .iter()
                .zip(&self.mask)
                .map(|(&v, &m)| if m { v + offset } else { 0.0 })
                .collect(),
            mask: self.mask.clone(),
        }
    }
}

/// A parameter that is either estimated by the engine or pinned by the user.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Setting<T> {
    #[default]
    Auto,
    Fixed(T),
}

impl<T: Copy> Setting<T> {
    pub fn fixed(&self) -> Option<T> {
        match self {
            Setting::Auto => None,
            Setting::Fixed(v) => Some(*v),
        }
    }
}

impl<T: Serialize> Serialize for Setting<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Setting::Auto => s.serialize_str("auto"),
            Setting::Fixed(v) => v.serialize(s),
        }
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Setting<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw<T> {
            Text(String),
            Value(T),
        }
        match Raw::<T>::deserialize(d)? {
            Raw::Text(s) if s.eq_ignore_ascii_case("auto") => Ok(Setting::Auto),
            Raw::Text(s) => Err(de::Error::custom(format!("expected \"auto\" or a value, got {s:?}"))),
            Raw::Value(v) => Ok(Setting::Fixed(v)),
        }
    }
}

impl<T: fmt::Display> fmt::Display for Setting<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Auto => f.write_str("auto"),
            Setting::Fixed(v) => v.fmt(f),
        }
    }
}

/// Closed attention subrange `[lo, hi]` within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionRange {
    pub lo: f64,
    pub hi: f64,
}

impl AttentionRange {
    pub const FULL: AttentionRange = AttentionRange { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    #[inline]
    pub fn contains(&self, a: f64) -> bool {
        a >= self.lo && a <= self.hi
    }
}

impl std::str::FromStr for AttentionRange {
    type Err = String;

    /// Parses `lo:hi`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
        let lo = lo.trim().parse::<f64>().map_err(|e| e.to_string())?;
        let hi = hi.trim().parse::<f64>().map_err(|e| e.to_string())?;
        Ok(AttentionRange { lo, hi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Histogram,
    Percentile,
}

/// Which attention signal governs masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionLevel {
    Event,
    Feature,
    /// Feature level when the tensor carries it, event level otherwise.
    #[default]
    Auto,
}

/// Denominator used by the masked distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNorm {
    /// Divide by the full series length `T`.
    #[default]
    SeriesLength,
    /// Divide by the number of positions present in both series.
    SharedSupport,
}

/// Which bend of the merge-distance curve marks the elbow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ElbowRule {
    /// Largest positive second difference: where merge distances start to accelerate.
    #[default]
    Convex,
    /// Largest absolute second difference, either bend.
    Absolute,
}

/// How the cluster count is read off the gap profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KSelection {
    /// Smallest `k` with `gap(k) >= gap(k+1) - s(k+1)`, where `s` is the
    /// reference spread scaled by `sqrt(1 + 1/n_ref)`.
    #[default]
    OneStandardError,
    /// Largest gap, ties to the smallest `k`.
    Argmax,
}

/// How per-reference log-dispersions are combined in the gap statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceAggregate {
    #[default]
    Mean,
    /// Literal sum over references; kept for comparison runs only.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisParams {
    pub aoi: Vec<AttentionRange>,
    pub attention_mode: AttentionMode,
    pub attention_level: AttentionLevel,
    pub sample_fraction: f64,
    pub noise_level: Setting<f64>,
    pub cluster_count: Setting<usize>,
    pub n_ref: usize,
    pub k_max: usize,
    pub bin_count: usize,
    pub quantile_edges: Vec<f64>,
    pub smoothing_window: usize,
    pub elbow_rule: ElbowRule,
    pub distance_norm: DistanceNorm,
    pub reference_aggregate: ReferenceAggregate,
    pub k_selection: KSelection,
    pub seed: u64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            aoi: vec![AttentionRange::FULL],
            attention_mode: AttentionMode::Histogram,
            attention_level: AttentionLevel::Auto,
            sample_fraction: 0.3,
            noise_level: Setting::Auto,
            cluster_count: Setting::Auto,
            n_ref: 3,
            k_max: 10,
            bin_count: 10,
            quantile_edges: vec![10.0, 30.0, 50.0, 70.0, 90.0],
            smoothing_window: 1,
            elbow_rule: ElbowRule::Convex,
            distance_norm: DistanceNorm::SeriesLength,
            reference_aggregate: ReferenceAggregate::Mean,
            k_selection: KSelection::OneStandardError,
            seed: 0,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.aoi.is_empty() {
            return bad("aoi must contain at least one range".into());
        }
        for r in &self.aoi {
            if !(0.0..=1.0).contains(&r.lo) || !(0.0..=1.0).contains(&r.hi) || r.lo > r.hi {
                return bad(format!("aoi range [{}, {}] is not a subrange of [0, 1]", r.lo, r.hi));
            }
        }
        let mut sorted = self.aoi.clone();
        sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for w in sorted.windows(2) {
            if w[1].lo <= w[0].hi {
                return bad(format!(
                    "aoi ranges [{}, {}] and [{}, {}] overlap",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                ));
            }
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad(format!("sample_fraction {} not in (0, 1]", self.sample_fraction));
        }
        if let Setting::Fixed(l) = self.noise_level {
            if !(0.0..=1.0).contains(&l) {
                return bad(format!("noise_level {l} not in [0, 1]"));
            }
        }
        if self.cluster_count == Setting::Fixed(0) {
            return bad("cluster_count must be positive".into());
        }
        if self.n_ref == 0 || self.k_max == 0 || self.bin_count == 0 {
            return bad("n_ref, k_max and bin_count must be positive".into());
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return bad(format!("smoothing_window {} must be odd", self.smoothing_window));
        }
        if self.quantile_edges.is_empty() {
            return bad("quantile_edges must not be empty".into());
        }
        for w in self.quantile_edges.windows(2) {
            if w[1] <= w[0] {
                return bad("quantile_edges must be strictly ascending".into());
            }
        }
        if self.quantile_edges.iter().any(|&p| !(p > 0.0 && p < 100.0)) {
            return bad("quantile_edges must lie in (0, 100)".into());
        }
        Ok(())
    }
}

/// One violated dataset invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    FeatureIds { expected: usize, found: usize, position: usize },
    FeatureRange { feature: usize, min: f64, max: f64 },
    ShapeMismatch { instance: String, expected: usize, found: usize },
    LabelOutOfRange { instance: String, label: usize },
    EmptyClass { label: usize },
    ValueOutOfRange { instance: String, t: usize, feature: usize, value: f64 },
    AttributeKeys { instance: String },
    DuplicateId { instance: String },
    AttentionShape { instance: String, level: String, expected: usize, found: usize },
    AttentionOutOfRange { instance: String, t: usize, feature: Option<usize>, value: f64 },
    AttentionCount { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FeatureIds { expected, found, position } => {
                write!(f, "feature at position {position} has id {found}, expected {expected}")
            }
            Violation::FeatureRange { feature, min, max } => {
                write!(f, "feature {feature}: value_min {min} > value_max {max}")
            }
            Violation::ShapeMismatch { instance, expected, found } => {
                write!(f, "instance {instance}: {found} values, expected {expected}")
            }
            Violation::LabelOutOfRange { instance, label } => {
                write!(f, "instance {instance}: label {label} out of range")
            }
            Violation::EmptyClass { label } => write!(f, "class {label} has no instances"),
            Violation::ValueOutOfRange { instance, t, feature, value } => {
                write!(f, "instance {instance}, t={t}, feature {feature}: value {value} outside range")
            }
            Violation::AttributeKeys { instance } => {
                write!(f, "instance {instance}: attribute keys differ from the first instance")
            }
            Violation::DuplicateId { instance } => write!(f, "duplicate instance id {instance}"),
            Violation::AttentionShape { instance, level, expected, found } => write!(
                f,
                "instance {instance}: {level} attention has {found} entries, expected {expected}"
            ),
            Violation::AttentionOutOfRange { instance, t, feature, value } => match feature {
                Some(feat) => write!(
                    f,
                    "instance {instance}, t={t}, feature {feat}: attention {value} outside [0, 1]"
                ),
                None => write!(f, "instance {instance}, t={t}: attention {value} outside [0, 1]"),
            },
            Violation::AttentionCount { expected, found } => {
                write!(f, "attention covers {found} instances, expected {expected}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every dataset and attention invariant and reports all violations.
pub fn validate_dataset(dataset: &SequenceDataset, attention: &AttentionTensor) -> ValidationReport {
    let mut out = Vec::new();
    let t_len = dataset.time_steps;
    let f_len = dataset.feature_count();

    for (pos, spec) in dataset.features.iter().enumerate() {
        if spec.id != pos {
            out.push(Violation::FeatureIds { expected: pos, found: spec.id, position: pos });
        }
        if spec.value_min.partial_cmp(&spec.value_max).is_none_or(|o| o.is_gt()) {
            out.push(Violation::FeatureRange {
                feature: spec.id,
                min: spec.value_min,
                max: spec.value_max,
            });
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    let mut class_sizes = vec![0usize; dataset.class_count];
    let first_keys: Option<Vec<&String>> =
        dataset.instances.first().map(|i| i.attributes.keys().collect());

    for inst in &dataset.instances {
        if !seen.insert(inst.id.as_str()) {
            out.push(Violation::DuplicateId { instance: inst.id.clone() });
        }
        if inst.label < dataset.class_count {
            class_sizes[inst.label] += 1;
        } else {
            out.push(Violation::LabelOutOfRange { instance: inst.id.clone(), label: inst.label });
        }
        if let Some(keys) = &first_keys {
            if !inst.attributes.keys().eq(keys.iter().copied()) {
                out.push(Violation::AttributeKeys { instance: inst.id.clone() });
            }
        }
        if inst.values.len() != t_len * f_len {
            out.push(Violation::ShapeMismatch {
                instance: inst.id.clone(),
                expected: t_len * f_len,
                found: inst.values.len(),
            });
            continue;
        }
        for t in 0..t_len {
            for (f, spec) in dataset.features.iter().enumerate() {
                let v = inst.values[t * f_len + f];
                if !spec.contains(v) {
                    out.push(Violation::ValueOutOfRange {
                        instance: inst.id.clone(),
                        t,
                        feature: f,
                        value: v,
                    });
                }
            }
        }
    }
    for (label, &n) in class_sizes.iter().enumerate() {
        if n == 0 {
            out.push(Violation::EmptyClass { label });
        }
    }

    let n = dataset.instances.len();
    if attention.event_level.len() != n {
        out.push(Violation::AttentionCount { expected: n, found: attention.event_level.len() });
    }
    if let Some(fl) = &attention.feature_level {
        if fl.len() != n {
            out.push(Violation::AttentionCount { expected: n, found: fl.len() });
        }
    }
    for (i, inst) in dataset.instances.iter().enumerate() {
        if let Some(row) = attention.event_level.get(i) {
            if row.len() != t_len {
                out.push(Violation::AttentionShape {
                    instance: inst.id.clone(),
                    level: "event".into(),
                    expected: t_len,
                    found: row.len(),
                });
            } else {
                for (t, &a) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&a) {
                        out.push(Violation::AttentionOutOfRange {
                            instance: inst.id.clone(),
                            t,
                            feature: None,
                            value: a,
                        });
                    }
                }
            }
        }
        if let Some(row) = attention.feature_level.as_ref().and_then(|fl| fl.get(i)) {
            if row.len() != t_len * f_len {
                out.push(Violation::AttentionShape {
                    instance: inst.id.clone(),
                    level: "feature".into(),
                    expected: t_len * f_len,
                    found: row.len(),
                });
            } else {
                for (idx, &a) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&a) {
                        out.push(Violation::AttentionOutOfRange {
                            instance: inst.id.clone(),
                            t: idx / f_len,
                            feature: Some(idx % f_len),
                            value: a,
                        });
                    }
                }
            }
        }
    }

    ValidationReport { violations: out }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Three instances, `T = 4`, `F = 2`, two classes.
    pub fn toy() -> (SequenceDataset, AttentionTensor) {
        let features = vec![
            FeatureSpec {
                id: 0,
                name: "clicks".into(),
                value_min: 0.0,
                value_max: 10.0,
                kind: FeatureKind::Numeric,
            },
            FeatureSpec {
                id: 1,
                name: "score".into(),
                value_min: -1.0,
                value_max: 1.0,
                kind: FeatureKind::Numeric,
            },
        ];
        let mk = |id: &str, label, values: Vec<f64>, gender: &str| InstanceRecord {
            id: id.into(),
            label,
            values,
            attributes: BTreeMap::from([("gender".to_string(), gender.to_string())]),
            embedding: None,
        };
        let ds = SequenceDataset {
            time_steps: 4,
            class_count: 2,
            features,
            instances: vec![
                mk("a", 0, vec![1.0, 0.5, 2.0, 0.0, 3.0, -0.5, 4.0, 1.0], "f"),
                mk("b", 1, vec![0.0, 0.0, 5.0, 0.25, 10.0, -1.0, 2.0, 0.75], "m"),
                mk("c", 0, vec![7.0, 0.1, 7.0, 0.2, 7.0, 0.3, 7.0, 0.4], "m"),
            ],
        };
        let att = AttentionTensor {
            event_level: vec![
                vec![0.1, 0.9, 0.5, 0.3],
                vec![0.0, 1.0, 0.45, 0.7],
                vec![0.2, 0.2, 0.95, 0.6],
            ],
            feature_level: None,
        };
        (ds, att)
    }
}
