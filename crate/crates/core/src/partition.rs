//! Assignments of nodes to zones.

use std::collections::HashMap;
use std::io::{self, Write};

use crate::case::AdjacencyGraph;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    #[error("partition has no nodes")]
    Empty,
    #[error("zone label {0} is unused; labels must cover 0..k")]
    GapInLabels(usize),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("bus {0} is missing from the partition file")]
    MissingBus(u32),
    #[error("bus {0} is not part of the case")]
    UnknownBus(u32),
}

/// Zone label per node position, with labels exactly `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Wraps labels that already use every value in `0..k`.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self, PartitionError> {
        if labels.is_empty() {
            return Err(PartitionError::Empty);
        }
        let k = labels.iter().max().unwrap() + 1;
        let mut used = vec![false; k];
        for &l in &labels {
            used[l] = true;
        }
        if let Some(gap) = used.iter().position(|u| !u) {
            return Err(PartitionError::GapInLabels(gap));
        }
        Ok(Self { labels, k })
    }

    /// Builds a partition from arbitrary group keys, numbering zones in order
    /// of their first node.
    pub fn canonical_from<T: Eq + std::hash::Hash + Copy>(keys: &[T]) -> Result<Self, PartitionError> {
        let mut map = HashMap::new();
        let labels = keys
            .iter()
            .map(|key| {
                let next = map.len();
                *map.entry(*key).or_insert(next)
            })
            .collect();
        Self::from_labels(labels)
    }

    pub fn single_zone(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            k: 1,
        }
    }

    /// Same grouping with zones renumbered by first node.
    pub fn canonical(&self) -> Self {
        Self::canonical_from(&self.labels).expect("non-empty")
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Members of each zone, ascending.
    pub fn zones(&self) -> Vec<Vec<usize>> {
        let mut zones = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            zones[l].push(i);
        }
        zones
    }

    pub fn zone_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Zones whose members do not induce a connected subgraph.
    pub fn disconnected_zones(&self, graph: &AdjacencyGraph) -> Vec<usize> {
        self.zones()
            .iter()
            .enumerate()
            .filter(|(_, z)| !graph.induces_connected(z))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn zones_connected(&self, graph: &AdjacencyGraph) -> bool {
        self.disconnected_zones(graph).is_empty()
    }

    /// Sum over zones of squared deviations from the zone mean price.
    pub fn total_ess(&self, prices: &[f64]) -> f64 {
        self.zones()
            .iter()
            .map(|z| {
                let mean = z.iter().map(|&i| prices[i]).sum::<f64>() / z.len() as f64;
                z.iter().map(|&i| (prices[i] - mean).powi(2)).sum::<f64>()
            })
            .sum()
    }

    /// Writes `bus_id,zone` rows in node order.
    pub fn write_csv<W: Write>(&self, bus_ids: &[u32], mut w: W) -> io::Result<()> {
        writeln!(w, "bus_id,zone")?;
        for (id, l) in bus_ids.iter().zip(&self.labels) {
            writeln!(w, "{id},{l}")?;
        }
        Ok(())
    }

    /// Reads a `bus_id,zone` file, aligning rows with `bus_ids`.
    pub fn read_csv(text: &str, bus_ids: &[u32]) -> Result<Self, PartitionError> {
        let pos: HashMap<u32, usize> = bus_ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let mut labels = vec![usize::MAX; bus_ids.len()];
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| PartitionError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |message: String| PartitionError::Csv { line, message };
            if rec.len() < 2 {
                return Err(bad("expected bus_id,zone".into()));
            }
            let bus: u32 = rec[0].parse().map_err(|_| bad(format!("bad bus id {:?}", &rec[0])))?;
            let zone: usize = rec[1].parse().map_err(|_| bad(format!("bad zone {:?}", &rec[1])))?;
            let &i = pos.get(&bus).ok_or(PartitionError::UnknownBus(bus))?;
            labels[i] = zone;
        }
        if let Some(i) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(PartitionError::MissingBus(bus_ids[i]));
        }
        Self::from_labels(labels)
    }
}

/// Fraction of node pairs on which two partitions agree (both together or
/// both apart). Equals 1 for identical groupings.
pub fn pair_agreement(a: &Partition, b: &Partition) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions over different node sets");
    let n = a.len() as u64;
    if n < 2 {
        return 1.0;
    }
    let pairs = |c: u64| c * c.saturating_sub(1) / 2;
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    for i in 0..a.len() {
        *joint.entry((a.label(i), b.label(i))).or_default() += 1;
    }
    let same_both: u64 = joint.values().map(|&c| pairs(c)).sum();
    let same_a: u64 = a.zone_sizes().iter().map(|&c| pairs(c as u64)).sum();
    let same_b: u64 = b.zone_sizes().iter().map(|&c| pairs(c as u64)).sum();
    let total = pairs(n);
    let agree = total + 2 * same_both - same_a - same_b;
    agree as f64 / total as f64
}
