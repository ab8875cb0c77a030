//! Consensus over an ensemble of partitions: co-occurrence similarity and
//! average-linkage reclustering.
//!
//! Similarities are kept as integer co-occurrence counts. The similarity of
//! two clusters is `C(k, l) / (|Z_k| |Z_l| M)` where `C(k, l)` sums the counts
//! over all member pairs; comparisons cross-multiply in integers, so ties are
//! exact and results do not depend on summation order.

use std::collections::BTreeSet;
use std::io::{self, Read, Write};

use rayon::prelude::*;

use crate::case::AdjacencyGraph;
use crate::partition::Partition;

const MAGIC: &[u8; 4] = b"GZSM";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConsensusError {
    #[error("no partitions to aggregate")]
    NoPartitions,
    #[error("partition {index} covers {got} nodes, expected {expected}")]
    NodeMismatch { index: usize, expected: usize, got: usize },
    #[error("cannot form {k} zones from {n} nodes")]
    ZoneCount { k: usize, n: usize },
    #[error(
        "{remaining} clusters remain and none are adjacent (e.g. clusters containing nodes {first} and {second})"
    )]
    Blocked {
        remaining: usize,
        first: usize,
        second: usize,
    },
    #[error("graph has {graph} nodes but similarity has {n}")]
    GraphMismatch { graph: usize, n: usize },
    #[error("similarity file: {0}")]
    Format(String),
}

/// Dense count storage, 16-bit whenever the partition count allows.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Counts {
    Narrow(Vec<u16>),
    Wide(Vec<u32>),
}

/// Symmetric co-occurrence counts over `n` nodes from `m` partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityMatrix {
    n: usize,
    m: u64,
    counts: Counts,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of partitions aggregated.
    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        match &self.counts {
            Counts::Narrow(c) => c[i * self.n + j] as u32,
            Counts::Wide(c) => c[i * self.n + j],
        }
    }

    /// Bytes held by the dense count matrix.
    pub fn memory_bytes(&self) -> usize {
        match &self.counts {
            Counts::Narrow(c) => c.len() * 2,
            Counts::Wide(c) => c.len() * 4,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.count(i, j) as f64 / self.m as f64
    }

    /// Writes the binary form: `GZSM`, `n` as u32, `n²` u64 counts and `m`,
    /// all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.n * 8);
        for i in 0..self.n {
            buf.clear();
            for j in 0..self.n {
                buf.extend_from_slice(&(self.count(i, j) as u64).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.write_all(&self.m.to_le_bytes())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, ConsensusError> {
        let err = |e: io::Error| ConsensusError::Format(e.to_string());
        let mut head = [0u8; 8];
        r.read_exact(&mut head).map_err(err)?;
        if &head[..4] != MAGIC {
            return Err(ConsensusError::Format("bad magic".into()));
        }
        let n = u32::from_le_bytes(head[4..].try_into().unwrap()) as usize;
        let mut raw = Vec::with_capacity(n * n);
        let mut word = [0u8; 8];
        for _ in 0..n * n {
            r.read_exact(&mut word).map_err(err)?;
            raw.push(u64::from_le_bytes(word));
        }
        r.read_exact(&mut word).map_err(err)?;
        let m = u64::from_le_bytes(word);
        if raw.iter().any(|&c| c > m) || m > u32::MAX as u64 {
            return Err(ConsensusError::Format("count exceeds partition total".into()));
        }
        let counts = if m <= u16::MAX as u64 {
            Counts::Narrow(raw.iter().map(|&c| c as u16).collect())
        } else {
            Counts::Wide(raw.iter().map(|&c| c as u32).collect())
        };
        Ok(Self { n, m, counts })
    }

    /// CSV of similarities for the first `limit` nodes, rounded to 4 places.
    pub fn write_csv_preview<W: Write>(&self, bus_ids: &[u32], limit: usize, mut w: W) -> io::Result<()> {
        let k = limit.min(self.n);
        let header: Vec<String> = bus_ids[..k].iter().map(|b| b.to_string()).collect();
        writeln!(w, "bus_id,{}", header.join(","))?;
        for i in 0..k {
            let vals: Vec<String> = (0..k).map(|j| format!("{:.4}", self.get(i, j))).collect();
            writeln!(w, "{},{}", bus_ids[i], vals.join(","))?;
        }
        Ok(())
    }
}

/// Counts, for every node pair, the partitions that put both nodes in one
/// zone. Rows are filled in parallel; each entry is an exact integer.
pub fn build_similarity(partitions: &[Partition]) -> Result<SimilarityMatrix, ConsensusError> {
    let first = partitions.first().ok_or(ConsensusError::NoPartitions)?;
    let n = first.len();
    for (index, p) in partitions.iter().enumerate() {
        if p.len() != n {
            return Err(ConsensusError::NodeMismatch {
                index,
                expected: n,
                got: p.len(),
            });
        }
    }
    let counts = if partitions.len() <= u16::MAX as usize {
        Counts::Narrow(count_pairs(n, partitions))
    } else {
        Counts::Wide(count_pairs(n, partitions))
    };
    Ok(SimilarityMatrix {
        n,
        m: partitions.len() as u64,
        counts,
    })
}

fn count_pairs<T>(n: usize, partitions: &[Partition]) -> Vec<T>
where
    T: Copy + Send + Sync + From<u8> + std::ops::AddAssign,
{
    let zones: Vec<Vec<Vec<usize>>> = partitions.iter().map(Partition::zones).collect();
    let mut counts = vec![T::from(0u8); n * n];
    counts.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (p, z) in partitions.iter().zip(&zones) {
            for &j in &z[p.label(i)] {
                row[j] += T::from(1u8);
            }
        }
    });
    counts
}

/// Cluster-pair count sums, 32-bit when every possible sum fits.
enum Cross {
    Narrow(Vec<u32>),
    Wide(Vec<u64>),
}

impl Cross {
    fn new(sim: &SimilarityMatrix) -> Self {
        let n = sim.n as u128;
        let bound = sim.m as u128 * (n / 2) * (n - n / 2);
        let cells = sim.n * sim.n;
        if bound <= u32::MAX as u128 {
            Cross::Narrow((0..cells).map(|x| sim.count(x / sim.n, x % sim.n)).collect())
        } else {
            Cross::Wide((0..cells).map(|x| sim.count(x / sim.n, x % sim.n) as u64).collect())
        }
    }

    fn get(&self, idx: usize) -> u64 {
        match self {
            Cross::Narrow(v) => v[idx] as u64,
            Cross::Wide(v) => v[idx],
        }
    }

    fn set(&mut self, idx: usize, value: u64) {
        match self {
            Cross::Narrow(v) => v[idx] = value as u32,
            Cross::Wide(v) => v[idx] = value,
        }
    }
}

/// Average-linkage agglomeration state over a similarity matrix. Clusters
/// are identified by creation index (leaves `0..n`, merge `t` creates
/// `n + t`) and stored in slots; a merged cluster reuses the lower slot.
pub struct ConsensusState<'a> {
    sim: &'a SimilarityMatrix,
    /// Summed counts between the clusters in two slots.
    cross: Cross,
    members: Vec<Vec<usize>>,
    ids: Vec<usize>,
    active: Vec<bool>,
    neighbors: Option<Vec<BTreeSet<usize>>>,
    best: Vec<Option<usize>>,
    steps: usize,
}

impl<'a> ConsensusState<'a> {
    pub fn new(sim: &'a SimilarityMatrix, graph: Option<&AdjacencyGraph>) -> Result<Self, ConsensusError> {
        let n = sim.n;
        if let Some(g) = graph {
            if g.node_count() != n {
                return Err(ConsensusError::GraphMismatch {
                    graph: g.node_count(),
                    n,
                });
            }
        }
        let cross = Cross::new(sim);
        let neighbors = graph.map(|g| {
            (0..n)
                .map(|i| g.neighbors(i).iter().copied().collect::<BTreeSet<usize>>())
                .collect()
        });
        let mut s = Self {
            sim,
            cross,
            members: (0..n).map(|i| vec![i]).collect(),
            ids: (0..n).collect(),
            active: vec![true; n],
            neighbors,
            best: vec![None; n],
            steps: 0,
        };
        for k in 0..n {
            s.best[k] = s.row_best(k);
        }
        Ok(s)
    }

    /// Number of merges performed.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn cluster_count(&self) -> usize {
        self.sim.n - self.steps
    }

    /// Member lists of the current clusters, in slot order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        (0..self.sim.n)
            .filter(|&k| self.active[k])
            .map(|k| {
                let mut m = self.members[k].clone();
                m.sort_unstable();
                m
            })
            .collect()
    }

    /// Slots of the current clusters, aligned with [`Self::clusters`].
    pub fn slots(&self) -> Vec<usize> {
        (0..self.sim.n).filter(|&k| self.active[k]).collect()
    }

    /// Similarity between the clusters in two slots.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        let den = (self.members[a].len() * self.members[b].len()) as f64 * self.sim.m as f64;
        self.cross.get(a * self.sim.n + b) as f64 / den
    }

    fn key(&self, a: usize, b: usize) -> (usize, usize) {
        let (x, y) = (self.ids[a], self.ids[b]);
        (x.min(y), x.max(y))
    }

    /// Whether pair `(a, b)` ranks above pair `(c, d)`: higher similarity,
    /// then lexicographically smaller creation-index pair.
    fn better(&self, (a, b): (usize, usize), (c, d): (usize, usize)) -> bool {
        let n = self.sim.n;
        let lhs = self.cross.get(a * n + b) as u128 * (self.members[c].len() * self.members[d].len()) as u128;
        let rhs = self.cross.get(c * n + d) as u128 * (self.members[a].len() * self.members[b].len()) as u128;
        lhs > rhs || (lhs == rhs && self.key(a, b) < self.key(c, d))
    }

    fn eligible(&self, k: usize) -> Vec<usize> {
        match &self.neighbors {
            Some(nb) => nb[k].iter().copied().collect(),
            None => (0..self.sim.n).filter(|&l| l != k && self.active[l]).collect(),
        }
    }

    fn row_best(&self, k: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for l in self.eligible(k) {
            if best.is_none_or(|b| self.better((k, l), (k, b))) {
                best = Some(l);
            }
        }
        best
    }

    /// The pair that would merge next, as slots.
    pub fn next_pair(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for k in 0..self.sim.n {
            if !self.active[k] {
                continue;
            }
            if let Some(l) = self.best[k] {
                if best.is_none_or(|p| self.better((k, l), p)) {
                    best = Some((k, l));
                }
            }
        }
        best.map(|(a, b)| (a.min(b), a.max(b)))
    }

    /// Merges the most similar eligible pair. Returns `false` when no pair is
    /// eligible.
    pub fn step(&mut self) -> bool {
        let Some((a, b)) = self.next_pair() else {
            return false;
        };
        let n = self.sim.n;
        for l in 0..n {
            if self.active[l] && l != a && l != b {
                let v = self.cross.get(a * n + l) + self.cross.get(b * n + l);
                self.cross.set(a * n + l, v);
                self.cross.set(l * n + a, v);
            }
        }
        let moved = std::mem::take(&mut self.members[b]);
        self.members[a].extend(moved);
        self.active[b] = false;
        self.ids[a] = n + self.steps;
        self.steps += 1;
        if let Some(nb) = &mut self.neighbors {
            let from_b = std::mem::take(&mut nb[b]);
            let mut merged: BTreeSet<usize> = nb[a].union(&from_b).copied().collect();
            merged.remove(&a);
            merged.remove(&b);
            for &l in &merged {
                nb[l].remove(&b);
                nb[l].insert(a);
            }
            nb[a] = merged;
        }
        self.best[b] = None;
        self.best[a] = self.row_best(a);
        for k in 0..n {
            if !self.active[k] || k == a {
                continue;
            }
            match self.best[k] {
                Some(l) if l == a || l == b => self.best[k] = self.row_best(k),
                current => {
                    let adjacent = match &self.neighbors {
                        Some(nb) => nb[k].contains(&a),
                        None => true,
                    };
                    if adjacent && current.is_none_or(|l| self.better((k, a), (k, l))) {
                        self.best[k] = Some(a);
                    }
                }
            }
        }
        true
    }

    pub fn partition(&self) -> Partition {
        let mut labels = vec![0usize; self.sim.n];
        for (z, members) in self.clusters().iter().enumerate() {
            for &i in members {
                labels[i] = z;
            }
        }
        Partition::from_labels(labels).expect("clusters cover all nodes").canonical()
    }
}

/// Merges clusters by highest average similarity until `k` remain. With a
/// graph, only clusters joined by an edge may merge.
pub fn consensus_cluster(
    sim: &SimilarityMatrix,
    k: usize,
    graph: Option<&AdjacencyGraph>,
) -> Result<Partition, ConsensusError> {
    let n = sim.n;
    if k == 0 || k > n {
        return Err(ConsensusError::ZoneCount { k, n });
    }
    let mut state = ConsensusState::new(sim, graph)?;
    while state.cluster_count() > k {
        if !state.step() {
            let clusters = state.clusters();
            return Err(ConsensusError::Blocked {
                remaining: clusters.len(),
                first: clusters[0][0],
                second: clusters[1][0],
            });
        }
    }
    Ok(state.partition())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(labels: &[usize]) -> Partition {
        Partition::from_labels(labels.to_vec()).unwrap()
    }

    #[test]
    fn identical_partitions_give_binary_similarity() {
        let parts = vec![p(&[0, 0, 1, 1]); 3];
        let s = build_similarity(&parts).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let same = parts[0].label(i) == parts[0].label(j);
                assert_eq!(s.get(i, j), if same { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(consensus_cluster(&s, 2, None).unwrap(), parts[0]);
    }

    #[test]
    fn three_node_example() {
        let s = build_similarity(&[p(&[0, 0, 1]), p(&[0, 1, 1])]).unwrap();
        assert_eq!(s.get(0, 1), 0.5);
        assert_eq!(s.get(1, 2), 0.5);
        assert_eq!(s.get(0, 2), 0.0);
        let mut st = ConsensusState::new(&s, None).unwrap();
        assert_eq!(st.next_pair(), Some((0, 1)));
        assert!(st.step());
        // Slot 0 now holds {0, 1}; its similarity to {2} is (0 + 0.5) / 2.
        assert_eq!(st.similarity(0, 2), 0.25);
        assert_eq!(st.partition().labels(), &[0, 0, 1]);
        assert_eq!(consensus_cluster(&s, 2, None).unwrap().labels(), &[0, 0, 1]);
    }

    #[test]
    fn mismatched_sizes() {
        assert_eq!(
            build_similarity(&[p(&[0, 1]), p(&[0, 0, 1])]),
            Err(ConsensusError::NodeMismatch {
                index: 1,
                expected: 2,
                got: 3
            })
        );
        assert_eq!(build_similarity(&[]), Err(ConsensusError::NoPartitions));
    }

    #[test]
    fn mask_blocks_non_adjacent_merges() {
        // Nodes 0 and 2 always agree but are not adjacent.
        let s = build_similarity(&[p(&[0, 1, 0]), p(&[0, 1, 0])]).unwrap();
        let g = AdjacencyGraph::from_edges(3, [(0, 1), (1, 2)]);
        assert_eq!(consensus_cluster(&s, 2, None).unwrap().labels(), &[0, 1, 0]);
        let masked = consensus_cluster(&s, 2, Some(&g)).unwrap();
        assert!(masked.zones_connected(&g));
        let g2 = AdjacencyGraph::from_edges(3, [(0, 1)]);
        assert_eq!(
            consensus_cluster(&s, 1, Some(&g2)),
            Err(ConsensusError::Blocked {
                remaining: 2,
                first: 0,
                second: 2
            })
        );
    }

    #[test]
    fn binary_round_trip() {
        let s = build_similarity(&[p(&[0, 0, 1]), p(&[0, 1, 1]), p(&[0, 1, 2])]).unwrap();
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 9 * 8 + 8);
        assert_eq!(SimilarityMatrix::read_binary(buf.as_slice()).unwrap(), s);
        let mut csv = Vec::new();
        s.write_csv_preview(&[7, 8, 9], 2, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "bus_id,7,8\n7,1.0000,0.3333\n8,0.3333,1.0000\n");
    }
}
