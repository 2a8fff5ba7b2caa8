#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqlens::model::{AttentionTensor, FeatureKind, FeatureSpec, InstanceRecord, SequenceDataset};

/// Two or more classes of noisy sinusoid-like sequences with random attention.
/// Class `c` drifts upward by `c` so classes differ.
pub fn synthetic(seed: u64, per_class: &[usize], time_steps: usize) -> (SequenceDataset, AttentionTensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = vec![
        FeatureSpec { id: 0, name: "activity".into(), value_min: 0.0, value_max: 100.0, kind: FeatureKind::Numeric },
        FeatureSpec { id: 1, name: "score".into(), value_min: -5.0, value_max: 5.0, kind: FeatureKind::Numeric },
    ];
    let mut instances = Vec::new();
    let mut event_level = Vec::new();
    for (label, &n) in per_class.iter().enumerate() {
        for i in 0..n {
            let phase = (i % 3) as f64;
            let mut values = Vec::with_capacity(time_steps * 2);
            for t in 0..time_steps {
                let base = 40.0 + 10.0 * (t as f64 * 0.6 + phase).sin() + 5.0 * label as f64;
                values.push((base + rng.random_range(-3.0..3.0)).clamp(0.0, 100.0));
                values.push(((label as f64) - 0.5 + rng.random_range(-1.0..1.0)).clamp(-5.0, 5.0));
            }
            instances.push(InstanceRecord {
                id: format!("c{label}-{i:03}"),
                label,
                values,
                attributes: BTreeMap::from([("cohort".to_string(), ["x", "y"][i % 2].to_string())]),
                embedding: Some([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
            });
            event_level.push((0..time_steps).map(|_| rng.random_range(0.0..1.0)).collect());
        }
    }
    let ds = SequenceDataset { time_steps, class_count: per_class.len(), features, instances };
    (ds, AttentionTensor { event_level, feature_level: None })
}
