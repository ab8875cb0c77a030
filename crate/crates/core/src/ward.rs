//! Agglomerative clustering of nodal prices under Ward's criterion, where only
//! clusters joined by a branch may merge.
//!
//! Clusters carry their price sum rather than a running mean. For prices with
//! exactly representable sums (integers, in particular) the merge cost
//! `(s_a n_b - s_b n_a)^2 / (n_a n_b (n_a + n_b))` is then a single correctly
//! rounded division, so mathematically equal costs compare equal and the
//! tie-break rule applies exactly.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::case::AdjacencyGraph;
use crate::partition::Partition;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WardError {
    #[error("expected {expected} prices, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("price of node {0} is not finite")]
    NonFinitePrice(usize),
    #[error("graph is disconnected: {remaining} clusters remain with no adjacent pair")]
    Disconnected { remaining: usize },
    #[error("cannot cut {n} nodes into {k} zones")]
    ZoneCount { k: usize, n: usize },
    #[error("merge tree is malformed: {0}")]
    BadTree(String),
    #[error("merge tree JSON: {0}")]
    Json(String),
}

/// A cluster during agglomeration, identified by its creation index: leaves
/// are `0..N`, the cluster made by merge `t` is `N + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub id: usize,
    pub members: Vec<usize>,
    pub sum: f64,
    pub ess: f64,
    /// Creation indices of adjacent clusters.
    pub neighbors: BTreeSet<usize>,
}

impl ClusterState {
    pub fn singleton(node: usize, price: f64, neighbors: impl IntoIterator<Item = usize>) -> Self {
        Self {
            id: node,
            members: vec![node],
            sum: price,
            ess: 0.0,
            neighbors: neighbors.into_iter().collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.members.len() as f64
    }
}

/// Increase in total ESS from merging two disjoint groups given their sizes
/// and price sums.
pub fn ward_delta(n_a: usize, sum_a: f64, n_b: usize, sum_b: f64) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let diff = sum_a * nb - sum_b * na;
    diff * diff / (na * nb * (na + nb))
}

/// Merge cost of two clusters, or `+∞` when no branch joins them.
pub fn ward_merge_delta(a: &ClusterState, b: &ClusterState) -> f64 {
    if !a.neighbors.contains(&b.id) && !b.neighbors.contains(&a.id) {
        return f64::INFINITY;
    }
    ward_delta(a.size(), a.sum, b.size(), b.sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub left: usize,
    pub right: usize,
    pub new: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeTree {
    pub leaves: usize,
    pub merges: Vec<MergeRecord>,
}

impl MergeTree {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("merge tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, WardError> {
        let tree: MergeTree = serde_json::from_str(text).map_err(|e| WardError::Json(e.to_string()))?;
        tree.check()?;
        Ok(tree)
    }

    /// Checks that the records form a binary dendrogram over the leaves.
    pub fn check(&self) -> Result<(), WardError> {
        let n = self.leaves;
        if n > 0 && self.merges.len() != n - 1 {
            return Err(WardError::BadTree(format!(
                "{} merges for {} leaves",
                self.merges.len(),
                n
            )));
        }
        let mut alive = vec![false; n + self.merges.len()];
        alive[..n].fill(true);
        for (t, m) in self.merges.iter().enumerate() {
            if m.new != n + t {
                return Err(WardError::BadTree(format!("merge {t} creates {}", m.new)));
            }
            for c in [m.left, m.right] {
                if c >= m.new || !alive[c] {
                    return Err(WardError::BadTree(format!("merge {t} uses unavailable cluster {c}")));
                }
                alive[c] = false;
            }
            if m.left == m.right || !(m.delta >= 0.0) {
                return Err(WardError::BadTree(format!("merge {t} is invalid")));
            }
            alive[m.new] = true;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    delta: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.delta
            .total_cmp(&other.delta)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Merges adjacent clusters in order of least ESS increase until one cluster
/// remains. Ties go to the lexicographically smallest pair of creation
/// indices.
pub fn ward_cluster(prices: &[f64], graph: &AdjacencyGraph) -> Result<MergeTree, WardError> {
    let n = graph.node_count();
    if prices.len() != n {
        return Err(WardError::SizeMismatch {
            expected: n,
            got: prices.len(),
        });
    }
    if let Some(i) = prices.iter().position(|p| !p.is_finite()) {
        return Err(WardError::NonFinitePrice(i));
    }
    let mut clusters: Vec<Option<ClusterState>> = (0..n)
        .map(|i| Some(ClusterState::singleton(i, prices[i], graph.neighbors(i).iter().copied())))
        .collect();
    let mut heap = BinaryHeap::new();
    for (a, b) in graph.edges() {
        let (ca, cb) = (clusters[a].as_ref().unwrap(), clusters[b].as_ref().unwrap());
        heap.push(Reverse(Candidate {
            delta: ward_merge_delta(ca, cb),
            a,
            b,
        }));
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while merges.len() + 1 < n {
        let Some(Reverse(c)) = heap.pop() else {
            return Err(WardError::Disconnected {
                remaining: n - merges.len(),
            });
        };
        if clusters[c.a].is_none() || clusters[c.b].is_none() {
            continue;
        }
        let a = clusters[c.a].take().unwrap();
        let b = clusters[c.b].take().unwrap();
        let id = n + merges.len();
        let mut members = a.members;
        members.extend(b.members);
        let mut neighbors: BTreeSet<usize> = a.neighbors.union(&b.neighbors).copied().collect();
        neighbors.remove(&c.a);
        neighbors.remove(&c.b);
        let merged = ClusterState {
            id,
            members,
            sum: a.sum + b.sum,
            ess: a.ess + b.ess + c.delta,
            neighbors,
        };
        for &nb in &merged.neighbors {
            let other = clusters[nb].as_mut().unwrap();
            other.neighbors.remove(&c.a);
            other.neighbors.remove(&c.b);
            other.neighbors.insert(id);
            heap.push(Reverse(Candidate {
                delta: ward_delta(other.size(), other.sum, merged.size(), merged.sum),
                a: nb,
                b: id,
            }));
        }
        merges.push(MergeRecord {
            left: c.a,
            right: c.b,
            new: id,
            delta: c.delta,
        });
        clusters.push(Some(merged));
    }
    Ok(MergeTree { leaves: n, merges })
}

/// Undoes the last `k - 1` merges. Zones are numbered by their smallest node.
pub fn cut_tree(tree: &MergeTree, k: usize) -> Result<Partition, WardError> {
    let n = tree.leaves;
    if k == 0 || k > n {
        return Err(WardError::ZoneCount { k, n });
    }
    let mut parent: Vec<usize> = (0..n + tree.merges.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for m in &tree.merges[..n - k] {
        parent[m.left] = m.new;
        parent[m.right] = m.new;
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Ok(Partition::canonical_from(&roots).expect("tree has leaves"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> AdjacencyGraph {
        AdjacencyGraph::from_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    #[test]
    fn delta_of_two_singletons() {
        let a = ClusterState::singleton(0, 1.0, [1]);
        let b = ClusterState::singleton(1, 3.0, [0]);
        // ESS of {1, 3} around mean 2.
        assert_eq!(ward_merge_delta(&a, &b), 2.0);
        let c = ClusterState::singleton(2, 3.0, []);
        assert_eq!(ward_merge_delta(&a, &c), f64::INFINITY);
        let d = ClusterState::singleton(3, 1.0, [0]);
        assert_eq!(ward_merge_delta(&a, &d), 0.0);
    }

    #[test]
    fn path_with_two_plateaus() {
        let tree = ward_cluster(&[1.0, 1.0, 10.0, 10.0], &path(4)).unwrap();
        let pairs: Vec<(usize, usize, f64)> =
            tree.merges.iter().map(|m| (m.left, m.right, m.delta)).collect();
        assert_eq!(pairs, vec![(0, 1, 0.0), (2, 3, 0.0), (4, 5, 81.0)]);
        assert_eq!(cut_tree(&tree, 2).unwrap().labels(), &[0, 0, 1, 1]);
        tree.check().unwrap();
    }

    #[test]
    fn equal_prices_follow_creation_order() {
        let tree = ward_cluster(&[5.0; 4], &path(4)).unwrap();
        let pairs: Vec<(usize, usize)> = tree.merges.iter().map(|m| (m.left, m.right)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn cut_extremes() {
        let tree = ward_cluster(&[3.0, 1.0, 4.0, 1.0, 5.0], &path(5)).unwrap();
        assert_eq!(cut_tree(&tree, 1).unwrap().k(), 1);
        assert_eq!(cut_tree(&tree, 5).unwrap().labels(), &[0, 1, 2, 3, 4]);
        assert_eq!(cut_tree(&tree, 0), Err(WardError::ZoneCount { k: 0, n: 5 }));
        assert_eq!(cut_tree(&tree, 6), Err(WardError::ZoneCount { k: 6, n: 5 }));
    }

    #[test]
    fn disconnected_graph_fails() {
        let g = AdjacencyGraph::from_edges(3, [(0, 1)]);
        assert_eq!(
            ward_cluster(&[1.0, 2.0, 3.0], &g),
            Err(WardError::Disconnected { remaining: 2 })
        );
    }

    #[test]
    fn json_round_trip() {
        let tree = ward_cluster(&[3.0, 1.0, 4.0], &path(3)).unwrap();
        assert_eq!(MergeTree::from_json(&tree.to_json()).unwrap(), tree);
        let mut bad = tree.clone();
        bad.merges[1].left = 0;
        assert!(matches!(bad.check(), Err(WardError::BadTree(_))));
    }
}
