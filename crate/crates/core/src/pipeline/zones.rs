//! Zone post-processing and statistics: tiny-zone merging, inter-zone
//! transfers, per-zone reports and geographic interleaving checks.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::case::{AdjacencyGraph, NetworkCase};
use crate::opf::{fmt_num, DcOpfSolution};
use crate::partition::Partition;
use crate::ward::ward_delta;

use super::PipelineError;

/// Folds every zone smaller than `min_size` into the adjacent zone whose
/// merge raises the price ESS least, smallest zones first.
pub fn merge_tiny_zones(
    p: &Partition,
    min_size: usize,
    prices: &[f64],
    graph: &AdjacencyGraph,
) -> Result<Partition, PipelineError> {
    let mut part = p.canonical();
    loop {
        if part.k() == 1 {
            return Ok(part);
        }
        let sizes = part.zone_sizes();
        let Some(tiny) = (0..part.k())
            .filter(|&z| sizes[z] < min_size)
            .min_by_key(|&z| (sizes[z], z))
        else {
            return Ok(part);
        };
        let mut sums = vec![0.0; part.k()];
        for (i, &l) in part.labels().iter().enumerate() {
            sums[l] += prices[i];
        }
        let mut adjacent = vec![false; part.k()];
        for (a, b) in graph.edges() {
            let (la, lb) = (part.label(a), part.label(b));
            if la == tiny && lb != tiny {
                adjacent[lb] = true;
            } else if lb == tiny && la != tiny {
                adjacent[la] = true;
            }
        }
        let target = (0..part.k())
            .filter(|&z| adjacent[z])
            .map(|z| (ward_delta(sizes[tiny], sums[tiny], sizes[z], sums[z]), z))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, z)| z)
            .ok_or(PipelineError::IsolatedZone(tiny))?;
        let labels: Vec<usize> = part
            .labels()
            .iter()
            .map(|&l| if l == tiny { target } else { l })
            .collect();
        part = Partition::canonical_from(&labels).expect("non-empty");
    }
}

/// Net inter-zone flows in GW: `get(a, b)` is the flow from zone `a` into
/// zone `b`, and `get(b, a) = -get(a, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTable {
    k: usize,
    values: Vec<f64>,
}

/// One zone pair with a positive net transfer from `from` to `to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: usize,
    pub to: usize,
    pub gw: f64,
}

impl TransferTable {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            values: vec![0.0; k * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.k + b]
    }

    /// Sets the transfer from `a` into `b` (and its mirror).
    pub fn set(&mut self, a: usize, b: usize, gw: f64) {
        self.values[a * self.k + b] = gw;
        self.values[b * self.k + a] = -gw;
    }

    fn add(&mut self, a: usize, b: usize, gw: f64) {
        self.values[a * self.k + b] += gw;
        self.values[b * self.k + a] -= gw;
    }

    /// Net export of zone `a`.
    pub fn net_export(&self, a: usize) -> f64 {
        (0..self.k).map(|b| self.get(a, b)).sum()
    }

    /// Every zone pair with its transfer oriented exporter to importer, in
    /// pair order; pairs with zero exchange are listed with `gw = 0`.
    pub fn pairs(&self) -> Vec<Transfer> {
        let mut out = Vec::new();
        for a in 0..self.k {
            for b in a + 1..self.k {
                let v = self.get(a, b);
                out.push(if v < 0.0 {
                    Transfer { from: b, to: a, gw: -v }
                } else {
                    Transfer { from: a, to: b, gw: v + 0.0 }
                });
            }
        }
        out
    }

    fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    fn accumulate(&mut self, other: &TransferTable) {
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += o;
        }
    }
}

/// Sums signed branch flows across zone borders.
pub fn interzone_transfers(p: &Partition, sol: &DcOpfSolution, case: &NetworkCase) -> TransferTable {
    let index = case.bus_index();
    let mut table = TransferTable::zeros(p.k());
    for (br, &flow) in case.branches.iter().zip(&sol.flows) {
        if !br.in_service {
            continue;
        }
        let a = p.label(index[&br.from_bus]);
        let b = p.label(index[&br.to_bus]);
        if a != b {
            table.add(a, b, flow / 1000.0);
        }
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    /// Statistics of the first solution only.
    Single,
    /// Statistics averaged over all solutions.
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneRow {
    pub zone: usize,
    pub nodes: usize,
    pub demand_gw: f64,
    pub generators: usize,
    pub output_gw: f64,
    pub marginal_price: f64,
    pub lmp_mean: f64,
    pub lmp_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    pub mode: ReportMode,
    pub scenarios: usize,
    pub rows: Vec<ZoneRow>,
    pub transfers: TransferTable,
}

/// Per-zone statistics. The zone marginal price is the highest marginal
/// cost among the zone's generators dispatched strictly inside their limits,
/// or 0 when there is none.
pub fn zone_report(
    p: &Partition,
    sols: &[DcOpfSolution],
    case: &NetworkCase,
    mode: ReportMode,
) -> ZoneReport {
    let used = match mode {
        ReportMode::Single => &sols[..sols.len().min(1)],
        ReportMode::Average => sols,
    };
    let index = case.bus_index();
    let zones = p.zones();
    let k = p.k();
    let gen_zone: Vec<Option<usize>> = case
        .generators
        .iter()
        .map(|g| g.in_service.then(|| p.label(index[&g.bus])))
        .collect();

    let mut rows: Vec<ZoneRow> = zones
        .iter()
        .enumerate()
        .map(|(z, members)| ZoneRow {
            zone: z,
            nodes: members.len(),
            demand_gw: members.iter().map(|&i| case.buses[i].demand).sum::<f64>() / 1000.0,
            generators: gen_zone.iter().filter(|&&g| g == Some(z)).count(),
            output_gw: 0.0,
            marginal_price: 0.0,
            lmp_mean: 0.0,
            lmp_std: 0.0,
        })
        .collect();
    let mut transfers = TransferTable::zeros(k);

    for sol in used {
        let mut output = vec![0.0; k];
        let mut marginal = vec![f64::NEG_INFINITY; k];
        for (g, z) in gen_zone.iter().enumerate() {
            if let Some(z) = *z {
                output[z] += sol.dispatch[g];
                if let Some(mc) = sol.marginal_cost[g] {
                    marginal[z] = marginal[z].max(mc);
                }
            }
        }
        for (z, members) in zones.iter().enumerate() {
            let n = members.len() as f64;
            let mean = members.iter().map(|&i| sol.lmp[i]).sum::<f64>() / n;
            let var = members.iter().map(|&i| (sol.lmp[i] - mean).powi(2)).sum::<f64>() / n;
            let row = &mut rows[z];
            row.output_gw += output[z] / 1000.0;
            row.marginal_price += if marginal[z].is_finite() { marginal[z] } else { 0.0 };
            row.lmp_mean += mean;
            row.lmp_std += var.sqrt();
        }
        transfers.accumulate(&interzone_transfers(p, sol, case));
    }
    if used.len() > 1 {
        let s = 1.0 / used.len() as f64;
        for row in &mut rows {
            row.output_gw *= s;
            row.marginal_price *= s;
            row.lmp_mean *= s;
            row.lmp_std *= s;
        }
        transfers.scale(s);
    }
    ZoneReport {
        mode,
        scenarios: used.len(),
        rows,
        transfers,
    }
}

pub const REPORT_HEADER: &str =
    "zone,nodes,demand_gw,generators,output_gw,marginal_price,lmp_mean,lmp_std";

impl ZoneReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.zone,
                r.nodes,
                fmt_num(r.demand_gw),
                r.generators,
                fmt_num(r.output_gw),
                fmt_num(r.marginal_price),
                fmt_num(r.lmp_mean),
                fmt_num(r.lmp_std)
            )?;
        }
        Ok(())
    }

    pub fn write_transfers_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "from_zone,to_zone,gw")?;
        for t in self.transfers.pairs() {
            writeln!(w, "{},{},{}", t.from, t.to, fmt_num(t.gw))?;
        }
        Ok(())
    }

    /// Fixed-width text table with one row per zone.
    pub fn render(&self) -> String {
        let headers = [
            "zone",
            "# nodes",
            "total power demand [GW]",
            "# generators",
            "total output [GW]",
            "marginal price",
            "average nodal price ± std",
        ];
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.zone.to_string(),
                    r.nodes.to_string(),
                    format!("{:.3}", r.demand_gw),
                    r.generators.to_string(),
                    format!("{:.3}", r.output_gw),
                    format!("{:.2}", r.marginal_price),
                    format!("{:.2} ± {:.2}", r.lmp_mean, r.lmp_std),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, vals: &[&str]| {
            let padded: Vec<String> = vals
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:>w$}", w = *w))
                .collect();
            let _ = writeln!(out, "| {} |", padded.join(" | "));
        };
        line(&mut out, &headers);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        for row in &cells {
            let refs: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &refs);
        }
        out
    }
}

/// A zone with nodes lying strictly inside the bounding box of another zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interleaving {
    pub zone: usize,
    pub other: usize,
    pub nodes: usize,
}

/// Flags zone pairs whose node sets overlap geographically. Buses without
/// coordinates are ignored.
pub fn detect_interleaving(p: &Partition, case: &NetworkCase) -> Vec<Interleaving> {
    let k = p.k();
    let mut boxes = vec![None::<(f64, f64, f64, f64)>; k];
    for (i, bus) in case.buses.iter().enumerate() {
        if let Some(c) = bus.coords {
            let b = &mut boxes[p.label(i)];
            *b = Some(match *b {
                None => (c.x, c.y, c.x, c.y),
                Some((x0, y0, x1, y1)) => (x0.min(c.x), y0.min(c.y), x1.max(c.x), y1.max(c.y)),
            });
        }
    }
    let mut out = Vec::new();
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let Some((x0, y0, x1, y1)) = boxes[b] else { continue };
            let nodes = case
                .buses
                .iter()
                .enumerate()
                .filter(|(i, bus)| {
                    p.label(*i) == a
                        && bus
                            .coords
                            .is_some_and(|c| c.x > x0 && c.x < x1 && c.y > y0 && c.y < y1)
                })
                .count();
            if nodes > 0 {
                out.push(Interleaving { zone: a, other: b, nodes });
            }
        }
    }
    out
}
