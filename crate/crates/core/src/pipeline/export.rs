//! Run directory layout, manifest and report re-rendering.
//!
//! ```text
//! run-<hash12>/
//!   manifest.json
//!   network.m                      case with farms attached
//!   mean_lmp.csv
//!   scenarios/<id>/                lmp.csv flows.csv dispatch.csv zones_k<K>.csv [tree.json]
//!   references/<name>/             same, for the no-wind and full-wind cases
//!   k<K>/                          zones.csv consensus_raw.csv report*.csv transfers*.csv
//!                                  report.txt [zones.dot] [similarity.bin similarity_preview.csv]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::case::{parse_case, serialize_case, NetworkCase};
use crate::opf::{fmt_num, write_dispatch_csv, write_flow_csv, write_lmp_csv, DcOpfSolution};
use crate::partition::Partition;

use super::zones::{ReportMode, TransferTable, ZoneReport, ZoneRow, REPORT_HEADER};
use super::{
    peak_rss_bytes, reference_agreement, OutputFormat, PipelineConfig, PipelineError, RunArtifacts,
    SkippedScenario,
};

/// Nodes shown in the similarity CSV preview.
const PREVIEW_NODES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub k: usize,
    /// Zone count before tiny zones were merged.
    pub raw_zones: usize,
    pub zones: usize,
    pub similarity_bytes: usize,
    pub interleaving_warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<String, String>,
    pub loaded_scenarios: usize,
    /// Solved scenarios, i.e. loaded minus skipped.
    pub scenario_count: usize,
    pub scenarios: Vec<String>,
    pub skipped: Vec<SkippedScenario>,
    pub dropped_dates: Vec<String>,
    pub references: Vec<String>,
    pub skipped_references: Vec<SkippedScenario>,
    pub partial: bool,
    pub k: Vec<KSummary>,
    /// Pair agreement of the two reference cuts per K.
    pub reference_agreement: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
    /// Every other file of the run, relative and sorted.
    pub files: Vec<String>,
}

struct Writer {
    root: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn put_with(
        &mut self,
        rel: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| PipelineError::io(&self.root.join(rel), e))?;
        self.put(rel, &buf)
    }
}

/// Directory-safe form of a scenario id.
fn slug(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes the run under `out_root/run-<hash12>` and returns that directory.
/// Contents depend only on the artifacts, so repeated runs reproduce them
/// byte for byte.
pub fn export_artifacts(art: &RunArtifacts, out_root: &Path) -> Result<PathBuf, PipelineError> {
    let root = out_root.join(art.run_dir_name());
    fs::create_dir_all(&root).map_err(|e| PipelineError::io(&root, e))?;
    let mut w = Writer {
        root: root.clone(),
        files: Vec::new(),
    };
    let cfg = &art.config;
    let mut warnings = Vec::new();

    if let Some(inputs) = &art.inputs {
        let case = &inputs.case;
        let bus_ids: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
        let gen_buses: Vec<u32> = case.generators.iter().map(|g| g.bus).collect();
        w.put("network.m", serialize_case(case).as_bytes())?;
        w.put_with("mean_lmp.csv", |b| {
            use std::io::Write;
            writeln!(b, "bus_id,lmp")?;
            for (id, p) in bus_ids.iter().zip(&art.mean_prices) {
                writeln!(b, "{id},{}", fmt_num(*p))?;
            }
            Ok(())
        })?;

        let write_solution = |w: &mut Writer, dir: &str, sol: &DcOpfSolution, cuts: &[Partition]| {
            if cfg.has(OutputFormat::Csv) {
                w.put_with(&format!("{dir}/lmp.csv"), |b| write_lmp_csv(sol, b))?;
                w.put_with(&format!("{dir}/flows.csv"), |b| write_flow_csv(sol, b))?;
                w.put_with(&format!("{dir}/dispatch.csv"), |b| write_dispatch_csv(sol, &gen_buses, b))?;
                for (k, cut) in cfg.k_values.iter().zip(cuts) {
                    w.put_with(&format!("{dir}/zones_k{k}.csv"), |b| cut.write_csv(&bus_ids, b))?;
                }
            }
            Ok::<_, PipelineError>(())
        };
        for o in &art.scenarios {
            let dir = format!("scenarios/{}", slug(&o.id));
            write_solution(&mut w, &dir, &o.solution, &o.cuts)?;
            if cfg.has(OutputFormat::Trees) {
                w.put(&format!("{dir}/tree.json"), o.tree.to_json().as_bytes())?;
            }
        }
        for r in &art.references {
            write_solution(&mut w, &format!("references/{}", slug(&r.name)), &r.solution, &r.cuts)?;
        }

        for ka in &art.per_k {
            let dir = format!("k{}", ka.k);
            w.put_with(&format!("{dir}/zones.csv"), |b| ka.consensus.write_csv(&bus_ids, b))?;
            w.put_with(&format!("{dir}/consensus_raw.csv"), |b| ka.raw.write_csv(&bus_ids, b))?;
            w.put_with(&format!("{dir}/report.csv"), |b| ka.report.write_csv(b))?;
            w.put_with(&format!("{dir}/transfers.csv"), |b| ka.report.write_transfers_csv(b))?;
            for (name, rep) in &ka.reference_reports {
                let name = slug(name);
                w.put_with(&format!("{dir}/report_{name}.csv"), |b| rep.write_csv(b))?;
                w.put_with(&format!("{dir}/transfers_{name}.csv"), |b| rep.write_transfers_csv(b))?;
            }
            let mut text = format!("K = {}, consensus averaged over {} scenarios\n", ka.k, ka.report.scenarios);
            text.push_str(&ka.report.render());
            for (name, rep) in &ka.reference_reports {
                let _ = write!(text, "\nK = {}, {name}\n", ka.k);
                text.push_str(&rep.render());
            }
            w.put(&format!("{dir}/report.txt"), text.as_bytes())?;
            if cfg.has(OutputFormat::Dot) {
                w.put(&format!("{dir}/zones.dot"), render_dot(case, &ka.consensus, &ka.report.transfers, ka.k).as_bytes())?;
            }
            if cfg.has(OutputFormat::Similarity) {
                w.put_with(&format!("{dir}/similarity.bin"), |b| ka.similarity.write_binary(b))?;
                w.put_with(&format!("{dir}/similarity_preview.csv"), |b| {
                    ka.similarity.write_csv_preview(&bus_ids, PREVIEW_NODES, b)
                })?;
            }
            for iv in &ka.interleaving {
                warnings.push(format!(
                    "K = {}: {} node(s) of zone {} lie inside the bounding box of zone {}",
                    ka.k, iv.nodes, iv.zone, iv.other
                ));
            }
        }
    }

    w.files.sort();
    let manifest = Manifest {
        config_hash: art.config_hash.clone(),
        config: cfg.canonical(),
        inputs: art.inputs.as_ref().map(|i| i.digests.clone()).unwrap_or_default(),
        loaded_scenarios: art.loaded_scenarios,
        scenario_count: art.scenarios.len(),
        scenarios: art.scenarios.iter().map(|o| o.id.clone()).collect(),
        skipped: art.skipped.clone(),
        dropped_dates: art.inputs.as_ref().map(|i| i.dropped.clone()).unwrap_or_default(),
        references: art.references.iter().map(|r| r.name.clone()).collect(),
        skipped_references: art.skipped_references.clone(),
        partial: art.is_partial(),
        k: art
            .per_k
            .iter()
            .map(|ka| KSummary {
                k: ka.k,
                raw_zones: ka.raw.k(),
                zones: ka.consensus.k(),
                similarity_bytes: ka.similarity.memory_bytes(),
                interleaving_warnings: ka.interleaving.len(),
            })
            .collect(),
        reference_agreement: reference_agreement(art),
        warnings,
        files: w.files.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = root.join("manifest.json");
    fs::write(&path, json + "\n").map_err(|e| PipelineError::io(&path, e))?;
    if let Some(rss) = peak_rss_bytes() {
        log::info!("peak resident memory {:.1} MB", rss as f64 / 1e6);
    }
    Ok(root)
}

const ZONE_COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

/// Graphviz drawing: buses colored by zone, 400 kV branches red, 220 kV
/// branches green, and one arrow per positive inter-zone transfer.
pub fn render_dot(case: &NetworkCase, p: &Partition, transfers: &TransferTable, k: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph zones_k{k} {{");
    out.push_str("  graph [overlap=false, outputorder=edgesfirst];\n");
    out.push_str("  node [shape=circle, style=filled, width=0.15, fixedsize=true, label=\"\"];\n");
    let index = case.bus_index();
    let mut centroid = vec![(0.0, 0.0, 0usize); p.k()];
    for (i, bus) in case.buses.iter().enumerate() {
        let z = p.label(i);
        let color = ZONE_COLORS[z % ZONE_COLORS.len()];
        let pos = match bus.coords {
            Some(c) => {
                let e = &mut centroid[z];
                e.0 += c.x;
                e.1 += c.y;
                e.2 += 1;
                format!(", pos=\"{},{}!\"", fmt_num(c.x), fmt_num(c.y))
            }
            None => String::new(),
        };
        let _ = writeln!(out, "  b{} [fillcolor=\"{color}\", tooltip=\"bus {} zone {z}\"{pos}];", bus.id, bus.id);
    }
    for br in case.branches.iter().filter(|b| b.in_service) {
        let level = case.buses[index[&br.from_bus]]
            .voltage_level
            .min(case.buses[index[&br.to_bus]].voltage_level);
        let style = if level >= 400.0 {
            "color=red"
        } else if level >= 220.0 {
            "color=green"
        } else {
            "color=gray"
        };
        let _ = writeln!(out, "  b{} -> b{} [dir=none, {style}];", br.from_bus, br.to_bus);
    }
    for (z, (sx, sy, n)) in centroid.iter().enumerate() {
        let pos = if *n > 0 {
            format!(", pos=\"{},{}!\"", fmt_num(sx / *n as f64), fmt_num(sy / *n as f64))
        } else {
            String::new()
        };
        let color = ZONE_COLORS[z % ZONE_COLORS.len()];
        let _ = writeln!(
            out,
            "  zone{z} [shape=box, fixedsize=false, width=0, label=\"zone {z}\", fillcolor=\"{color}\"{pos}];"
        );
    }
    for t in transfers.pairs().iter().filter(|t| t.gw > 0.0) {
        let _ = writeln!(
            out,
            "  zone{} -> zone{} [label=\"{:.3} GW\", penwidth=2, color=black];",
            t.from, t.to, t.gw
        );
    }
    out.push_str("}\n");
    out
}

/// A finished run read back from disk.
#[derive(Debug, Clone)]
pub struct RunView {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub case: NetworkCase,
    pub zones: Vec<RunZones>,
}

#[derive(Debug, Clone)]
pub struct RunZones {
    pub k: usize,
    pub partition: Partition,
    pub report: ZoneReport,
    pub reference_reports: Vec<(String, ZoneReport)>,
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn parse_report(report: &str, transfers: &str, mode: ReportMode, scenarios: usize, path: &Path) -> Result<ZoneReport, PipelineError> {
    let bad = |m: String| PipelineError::Artifact(format!("{}: {m}", path.display()));
    let mut lines = report.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(bad("unexpected report header".into()));
    }
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(format!("malformed row `{line}`")));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad count `{s}`")));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
        rows.push(ZoneRow {
            zone: int(f[0])?,
            nodes: int(f[1])?,
            demand_gw: num(f[2])?,
            generators: int(f[3])?,
            output_gw: num(f[4])?,
            marginal_price: num(f[5])?,
            lmp_mean: num(f[6])?,
            lmp_std: num(f[7])?,
        });
    }
    let mut table = TransferTable::zeros(rows.len());
    for line in transfers.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parsed = (f.len() == 3)
            .then(|| Some((f[0].parse::<usize>().ok()?, f[1].parse::<usize>().ok()?, f[2].parse::<f64>().ok()?)))
            .flatten();
        match parsed {
            Some((a, b, gw)) if a < rows.len() && b < rows.len() && a != b => table.set(a, b, gw),
            _ => return Err(bad(format!("malformed transfer `{line}`"))),
        }
    }
    Ok(ZoneReport {
        mode,
        scenarios,
        rows,
        transfers: table,
    })
}

/// Loads the manifest, case, consensus zones and reports of a run directory.
pub fn read_run(dir: &Path) -> Result<RunView, PipelineError> {
    let mpath = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&read_text(&mpath)?)
        .map_err(|e| PipelineError::Artifact(format!("{}: {e}", mpath.display())))?;
    let npath = dir.join("network.m");
    let case = parse_case(&read_text(&npath)?).map_err(|source| PipelineError::Case {
        path: npath.clone(),
        source,
    })?;
    let bus_ids: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
    let mut zones = Vec::new();
    for ks in &manifest.k {
        let kdir = dir.join(format!("k{}", ks.k));
        let zpath = kdir.join("zones.csv");
        let partition = Partition::read_csv(&read_text(&zpath)?, &bus_ids).map_err(|source| {
            PipelineError::Partition {
                path: zpath.clone(),
                source,
            }
        })?;
        let load = |suffix: &str, mode, scenarios| {
            let rpath = kdir.join(format!("report{suffix}.csv"));
            let tpath = kdir.join(format!("transfers{suffix}.csv"));
            parse_report(&read_text(&rpath)?, &read_text(&tpath)?, mode, scenarios, &rpath)
        };
        let report = load("", ReportMode::Average, manifest.scenario_count)?;
        let reference_reports = manifest
            .references
            .iter()
            .map(|name| Ok((name.clone(), load(&format!("_{}", slug(name)), ReportMode::Single, 1)?)))
            .collect::<Result<_, PipelineError>>()?;
        zones.push(RunZones {
            k: ks.k,
            partition,
            report,
            reference_reports,
        });
    }
    Ok(RunView {
        dir: dir.to_path_buf(),
        manifest,
        case,
        zones,
    })
}

/// Text tables for every K of a run, checked against the stored case: zone
/// rows must cover all buses and the full system demand.
pub fn render_report(view: &RunView) -> Result<String, PipelineError> {
    let n = view.case.buses.len();
    let demand_gw = view.case.total_demand() / 1000.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "run {} ({} of {} scenarios solved)",
        &view.manifest.config_hash[..12],
        view.manifest.scenario_count,
        view.manifest.loaded_scenarios
    );
    for z in &view.zones {
        let mut reports = vec![("consensus".to_string(), &z.report)];
        reports.extend(z.reference_reports.iter().map(|(n, r)| (n.clone(), r)));
        for (name, rep) in reports {
            let nodes: usize = rep.rows.iter().map(|r| r.nodes).sum();
            let demand: f64 = rep.rows.iter().map(|r| r.demand_gw).sum();
            if nodes != n || (demand - demand_gw).abs() > 1e-9 * demand_gw.abs().max(1.0) {
                return Err(PipelineError::Artifact(format!(
                    "K = {} {name} report covers {nodes} of {n} buses and {demand} of {demand_gw} GW",
                    z.k
                )));
            }
            let _ = writeln!(out, "\nK = {}, {name} ({} zones)", z.k, rep.rows.len());
            out.push_str(&rep.render());
            for t in rep.transfers.pairs().iter().filter(|t| t.gw > 0.0) {
                let _ = writeln!(out, "  zone {} -> zone {}: {:.3} GW", t.from, t.to, t.gw);
            }
        }
    }
    Ok(out)
}
