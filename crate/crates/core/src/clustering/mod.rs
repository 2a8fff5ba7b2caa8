//! Masked distances, single-link HAC, tree cutting and the merge-distance curve.

mod curve;
mod distance;
mod hac;

pub use curve::{distance_curve, elbow_of, smooth, DistanceCurve};
pub use distance::{masked_distance, DistanceMatrix};
pub use hac::{cut_tree, groups_from_labels, hac_from_matrix, hac_single_link, DendrogramLinkage, HacRun, Merge};
