use serde::{Deserialize, Serialize};

use super::hac::DendrogramLinkage;
use crate::error::{Error, Result};
use crate::model::ElbowRule;

/// Merge distance by iteration, its smoothed form and the elbow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCurve {
    /// Finite merge distances in merge order.
    pub points: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// `None` when fewer than three finite merges exist.
    pub elbow_index: Option<usize>,
    /// Trailing merges between incomparable clusters, excluded from the curve.
    pub incomparable_merges: usize,
}

impl DistanceCurve {
    pub fn elbow(&self) -> Result<usize> {
        self.elbow_index.ok_or(Error::TooFewMerges(self.points.len()))
    }
}

/// Centered moving average. Near the ends the window shrinks symmetrically
/// so it stays centered, which leaves linear segments unchanged.
pub fn smooth(points: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = points.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let span = &points[i - h..=i + h];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect()
}

/// Interior index maximising `s[i+1] - 2 s[i] + s[i-1]` (its absolute value
/// under [`ElbowRule::Absolute`]); ties go to the largest index. `None` for
/// fewer than three points.
pub fn elbow_of(smoothed: &[f64], rule: ElbowRule) -> Option<usize> {
    if smoothed.len() < 3 {
        return None;
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 1..smoothed.len() - 1 {
        let mut dd = smoothed[i + 1] - 2.0 * smoothed[i] + smoothed[i - 1];
        if rule == ElbowRule::Absolute {
            dd = dd.abs();
        }
        if dd >= best.0 {
            best = (dd, i);
        }
    }
    Some(best.1)
}

pub fn distance_curve(linkage: &DendrogramLinkage, smoothing_window: usize, rule: ElbowRule) -> DistanceCurve {
    let points: Vec<f64> = linkage.merges.iter().map_while(|m| m.distance).collect();
    let incomparable_merges = linkage.merges.len() - points.len();
    let smoothed = smooth(&points, smoothing_window.max(1));
    let elbow_index = elbow_of(&smoothed, rule);
    DistanceCurve { points, smoothed, elbow_index, incomparable_merges }
}
