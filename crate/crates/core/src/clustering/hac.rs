//! Single-link agglomerative clustering with next-best-merge (NBM) bookkeeping.
//!
//! Each active cluster remembers its closest neighbour. Under single linkage the
//! distance from a merged cluster to any other cluster is the minimum of the two
//! parents' distances, so a neighbour pointer never becomes worse after a merge
//! and only the merged cluster's pointer has to be recomputed. That makes each
//! merge `O(N)` and a full run `O(N^2)` after the matrix is built.

use serde::{Deserialize, Serialize};

use super::distance::DistanceMatrix;
use crate::cancel::CancelToken;
use crate::error::{Error, Result};
use crate::model::{DistanceNorm, MaskedSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Smaller of the two merged node ids.
    pub node_a: usize,
    pub node_b: usize,
    /// `None` when the two clusters share no comparable pair.
    pub distance: Option<f64>,
    /// Leaves are `0..n_leaves`; the `k`-th merge creates node `n_leaves + k`.
    pub new_node: usize,
    pub size: usize,
}

impl Merge {
    /// Merge distance with incomparable pairs at `+inf`.
    pub fn distance_or_inf(&self) -> f64 {
        self.distance.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DendrogramLinkage {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl DendrogramLinkage {
    /// Number of clusters left active after all recorded merges.
    pub fn active_count(&self) -> usize {
        self.n_leaves - self.merges.len()
    }

    pub fn is_full(&self) -> bool {
        self.n_leaves == 0 || self.merges.len() == self.n_leaves - 1
    }

    /// Index of the merge that first absorbs each leaf (`None` for leaves never merged).
    pub fn first_merge_of_leaf(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n_leaves];
        for (k, m) in self.merges.iter().enumerate() {
            for node in [m.node_a, m.node_b] {
                if node < self.n_leaves {
                    out[node] = Some(k);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HacRun {
    pub linkage: DendrogramLinkage,
    /// Leaf indices of each active cluster, ascending inside a cluster and
    /// ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
}

/// Clusters `items` until `stop_at` clusters remain.
pub fn hac_single_link(items: &[MaskedSeries], stop_at: usize, norm: DistanceNorm) -> Result<HacRun> {
    let matrix = DistanceMatrix::from_series(items, norm)?;
    hac_from_matrix(matrix, stop_at, &CancelToken::new())
}

/// NBM single-link HAC over a precomputed matrix, checking `cancel` between merges.
///
/// Ties are broken deterministically: the active cluster with the smallest
/// representative index wins, and its neighbour is the smallest index at the
/// minimal distance. Incomparable (`+inf`) pairs therefore merge after every
/// finite pair, in index order.
pub fn hac_from_matrix(matrix: DistanceMatrix, stop_at: usize, cancel: &CancelToken) -> Result<HacRun> {
    let n = matrix.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if stop_at == 0 || stop_at > n {
        return Err(Error::StopOutOfRange { stop_at, n });
    }
    let mut dist = matrix.into_dense();
    // rep[i] is the representative of the cluster containing leaf i
    let mut rep: Vec<usize> = (0..n).collect();
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut nbm: Vec<(f64, usize)> = (0..n).map(|i| nearest(&dist, n, i, |j| j != i)).collect();
    let mut merges = Vec::with_capacity(n - stop_at);

    for step in 0..n - stop_at {
        cancel.check()?;
        let mut i1 = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..n {
            if rep[i] == i && (i1 == usize::MAX || nbm[i].0 < best) {
                i1 = i;
                best = nbm[i].0;
            }
        }
        let i2 = rep[nbm[i1].1];
        debug_assert_ne!(i1, i2);

        let (a, b) = (node_of[i1], node_of[i2]);
        size[i1] += size[i2];
        merges.push(Merge {
            node_a: a.min(b),
            node_b: a.max(b),
            distance: best.is_finite().then_some(best),
            new_node: n + step,
            size: size[i1],
        });
        node_of[i1] = n + step;

        for i in 0..n {
            if rep[i] == i && i != i1 && i != i2 {
                let d = dist[i1 * n + i].min(dist[i2 * n + i]);
                dist[i1 * n + i] = d;
                dist[i * n + i1] = d;
            }
            if rep[i] == i2 {
                rep[i] = i1;
            }
        }
        let r = &rep;
        nbm[i1] = nearest(&dist, n, i1, |j| r[j] == j && j != i1);
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for (leaf, &r) in rep.iter().enumerate().take(n) {
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(leaf);
    }

    Ok(HacRun { linkage: DendrogramLinkage { n_leaves: n, merges }, clusters: groups })
}

fn nearest(dist: &[f64], n: usize, i: usize, eligible: impl Fn(usize) -> bool) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for j in 0..n {
        if eligible(j) {
            let d = dist[i * n + j];
            if best.1 == usize::MAX || d < best.0 {
                best = (d, j);
            }
        }
    }
    best
}

/// Cluster label per leaf after undoing the last `k - 1` merges of a full
/// linkage. Labels are `0..k`, numbered by each cluster's smallest leaf.
pub fn cut_tree(linkage: &DendrogramLinkage, k: usize) -> Result<Vec<usize>> {
    let n = linkage.n_leaves;
    let min_k = linkage.active_count().max(1);
    if k < min_k || k > n {
        return Err(Error::KOutOfRange { k, min: min_k, max: n });
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut leaf_of_node: Vec<usize> = (0..n).collect();
    for m in &linkage.merges[..n - k] {
        let ra = find(&mut parent, leaf_of_node[m.node_a]);
        let rb = find(&mut parent, leaf_of_node[m.node_b]);
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        parent[hi] = lo;
        leaf_of_node.push(lo);
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let mut labels = Vec::with_capacity(n);
    for leaf in 0..n {
        let r = find(&mut parent, leaf);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        labels.push(label_of_root[r]);
    }
    Ok(labels)
}

/// Groups leaf indices by label; `labels` must use `0..k`.
pub fn groups_from_labels(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (leaf, &l) in labels.iter().enumerate() {
        out[l].push(leaf);
    }
    out
}
