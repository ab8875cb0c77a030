//! The full scenario sweep: wind scenario → OPF → Ward cuts per scenario,
//! then consensus, tiny-zone merging and zone statistics per K.

mod export;
mod zones;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case::{
    attach_wind_farms, build_adjacency, load_coordinates, parse_case_with, validate_case,
    AdjacencyGraph, CaseError, NetworkCase, ParseOptions, WindBranchParams,
};
use crate::consensus::{build_similarity, consensus_cluster, ConsensusError, SimilarityMatrix};
use crate::lp::Basis;
use crate::opf::{solve_dcopf_from, DcOpfSolution, OpfError, OpfOptions};
use crate::partition::{pair_agreement, Partition, PartitionError};
use crate::ward::{cut_tree, ward_cluster, MergeTree, WardError};
use crate::wind::{
    apply_full_output, apply_scenario, assign_stations, load_farms, load_weather_series, DateFilter,
    PowerCurve, WeatherOptions, WeatherStation, WindError, WindFarm, WindParams, WindScenario,
    DEFAULT_HELLMAN_EXPONENT, DEFAULT_MEASUREMENT_HEIGHT,
};

pub use export::{export_artifacts, read_run, render_report, Manifest, RunView};
pub use zones::{
    detect_interleaving, interzone_transfers, merge_tiny_zones, zone_report, Interleaving,
    ReportMode, Transfer, TransferTable, ZoneReport, ZoneRow, REPORT_HEADER,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Case { path: PathBuf, source: CaseError },
    #[error("{path}: {source}")]
    Wind { path: PathBuf, source: WindError },
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("all {0} scenarios failed to solve")]
    AllInfeasible(usize),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Ward(#[from] WardError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("{path}: {source}")]
    Partition { path: PathBuf, source: PartitionError },
    #[error("zone {0} has no neighboring zone to merge into")]
    IsolatedZone(usize),
    #[error("{0}")]
    Artifact(String),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 for bad input, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::AllInfeasible(_) | PipelineError::Opf(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// LMP, flow, dispatch, partition and report tables.
    Csv,
    /// Graphviz drawing per consensus partition.
    Dot,
    /// Binary similarity matrix plus a CSV preview.
    Similarity,
    /// Per-scenario merge trees as JSON.
    Trees,
}

/// Every setting of a run. Serialized field order is fixed, which makes the
/// JSON form usable as hash input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub case: PathBuf,
    pub coordinates: Option<PathBuf>,
    pub farms: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub months: Vec<u32>,
    pub years: Option<(i32, i32)>,
    pub max_missing_fraction: f64,
    pub measurement_height: f64,
    pub hellman_exponent: f64,
    pub curve_scale: f64,
    pub curve_steepness: f64,
    pub wind_branch: WindBranchParams,
    pub polynomial_segments: usize,
    pub slack: Option<u32>,
    pub binding_tol: f64,
    pub k_values: Vec<usize>,
    /// Zones below this many nodes are merged away; 0 disables merging.
    pub min_zone_size: usize,
    pub connectivity_mask: bool,
    /// Feed the cuts of every K into each consensus instead of only the
    /// target K.
    pub pooled_k: bool,
    /// Skipped share of scenarios above which the run counts as partial.
    pub max_skipped_fraction: f64,
    pub formats: Vec<OutputFormat>,
    /// Worker threads; 0 lets the pool decide. Not part of the hash.
    pub threads: usize,
    /// Parent of the run directory. Not part of the hash.
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let curve = PowerCurve::default();
        Self {
            case: PathBuf::new(),
            coordinates: None,
            farms: None,
            weather: None,
            months: Vec::new(),
            years: None,
            max_missing_fraction: WeatherOptions::default().max_missing_fraction,
            measurement_height: DEFAULT_MEASUREMENT_HEIGHT,
            hellman_exponent: DEFAULT_HELLMAN_EXPONENT,
            curve_scale: curve.scale,
            curve_steepness: curve.steepness,
            wind_branch: WindBranchParams::default(),
            polynomial_segments: ParseOptions::default().polynomial_segments,
            slack: None,
            binding_tol: OpfOptions::default().binding_tol,
            k_values: vec![2, 3, 4],
            min_zone_size: 0,
            connectivity_mask: true,
            pooled_k: false,
            max_skipped_fraction: 0.0,
            formats: vec![OutputFormat::Csv, OutputFormat::Dot, OutputFormat::Similarity],
            threads: 0,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.case.as_os_str().is_empty() {
            return bad("no case file given".into());
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return bad("k_values must be a non-empty list of positive counts".into());
        }
        if self.farms.is_some() != self.weather.is_some() {
            return bad("farms and weather must be given together".into());
        }
        if let Some(m) = self.months.iter().find(|m| !(1..=12).contains(*m)) {
            return bad(format!("month {m} out of range"));
        }
        if self.polynomial_segments == 0 {
            return bad("polynomial_segments must be positive".into());
        }
        for (name, v) in [
            ("max_missing_fraction", self.max_missing_fraction),
            ("max_skipped_fraction", self.max_skipped_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.binding_tol >= 0.0) || !(self.measurement_height > 0.0) {
            return bad("tolerances and heights must be non-negative and finite".into());
        }
        Ok(())
    }

    pub fn has(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }

    pub fn wind_params(&self) -> WindParams {
        WindParams {
            alpha: self.hellman_exponent,
            curve: PowerCurve {
                scale: self.curve_scale,
                steepness: self.curve_steepness,
            },
        }
    }

    pub fn opf_options(&self) -> OpfOptions {
        OpfOptions {
            slack: self.slack,
            binding_tol: self.binding_tol,
        }
    }

    /// The settings that influence results: thread count and output location
    /// are cleared, and input paths are reduced to file names since the input
    /// digests pin their content.
    pub fn canonical(&self) -> Self {
        let name = |p: &Path| p.file_name().map(PathBuf::from).unwrap_or_default();
        let mut c = self.clone();
        c.threads = 0;
        c.output_dir = PathBuf::new();
        c.case = name(&c.case);
        for p in [&mut c.coordinates, &mut c.farms, &mut c.weather].into_iter().flatten() {
            *p = name(p);
        }
        c.formats.sort();
        c.formats.dedup();
        c
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.canonical()).expect("config serializes")
    }
}

/// SHA-256 over the canonical config and the input file digests.
pub fn config_hash(cfg: &PipelineConfig, inputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(cfg.canonical_json().as_bytes());
    for (k, v) in inputs {
        h.update([0]);
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parsed and cross-checked inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    /// Case with farms attached and coordinates applied.
    pub case: NetworkCase,
    pub graph: AdjacencyGraph,
    pub farms: Vec<WindFarm>,
    pub stations: Vec<WeatherStation>,
    pub scenarios: Vec<WindScenario>,
    /// Dates dropped for missing station readings.
    pub dropped: Vec<String>,
    /// SHA-256 per input role.
    pub digests: BTreeMap<String, String>,
}

fn read_input(path: &Path, role: &str, digests: &mut BTreeMap<String, String>) -> Result<String, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    digests.insert(role.to_string(), sha256_hex(text.as_bytes()));
    Ok(text)
}

/// Reads and validates every input named in the config. Without weather data
/// the case is studied as a single scenario called `base`.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs, PipelineError> {
    cfg.check()?;
    let mut digests = BTreeMap::new();
    let text = read_input(&cfg.case, "case", &mut digests)?;
    let parse = ParseOptions {
        polynomial_segments: cfg.polynomial_segments,
    };
    let case_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Case { path, source }
    };
    let mut case = parse_case_with(&text, &parse).map_err(case_err(&cfg.case))?;
    if let Some(path) = &cfg.coordinates {
        let text = read_input(path, "coordinates", &mut digests)?;
        case = case.with_coordinates(&load_coordinates(&text).map_err(case_err(path))?);
    }
    let report = validate_case(&case);
    if !report.is_valid() {
        let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(PipelineError::InvalidCase(msgs.join("; ")));
    }

    let (mut farms, mut stations, mut scenarios, mut dropped) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    if let (Some(fp), Some(wp)) = (&cfg.farms, &cfg.weather) {
        let wind_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PipelineError::Wind { path, source }
        };
        let loaded = load_farms(&read_input(fp, "farms", &mut digests)?).map_err(wind_err(fp))?;
        let opts = WeatherOptions {
            filter: DateFilter {
                months: cfg.months.clone(),
                years: cfg.years,
            },
            measurement_height: cfg.measurement_height,
            max_missing_fraction: cfg.max_missing_fraction,
        };
        let series = load_weather_series(&read_input(wp, "weather", &mut digests)?, &opts)
            .map_err(wind_err(wp))?;
        farms = assign_stations(&loaded, &series.stations).map_err(wind_err(wp))?;
        case = attach_wind_farms(&case, &farms, &cfg.wind_branch).map_err(case_err(fp))?;
        stations = series.stations;
        scenarios = series.scenarios;
        dropped = series.dropped;
    } else {
        scenarios.push(WindScenario {
            id: "base".into(),
            speeds: BTreeMap::new(),
        });
    }
    let n = case.buses.len();
    if let Some(&k) = cfg.k_values.iter().find(|&&k| k > n) {
        return Err(PipelineError::Config(format!("K = {k} exceeds the {n} buses")));
    }
    let graph = build_adjacency(&case);
    Ok(Inputs {
        case,
        graph,
        farms,
        stations,
        scenarios,
        dropped,
        digests,
    })
}

impl Inputs {
    /// The case under one wind scenario.
    pub fn scenario_case(&self, scenario: &WindScenario, params: &WindParams) -> Result<NetworkCase, WindError> {
        if self.farms.is_empty() {
            return Ok(self.case.clone());
        }
        apply_scenario(&self.case, &self.farms, &self.stations, scenario, params)
    }

    /// Named pseudo-scenarios: every station calm, and every farm at capacity.
    pub fn reference_cases(&self, params: &WindParams) -> Result<Vec<(String, NetworkCase)>, WindError> {
        if self.farms.is_empty() {
            return Ok(Vec::new());
        }
        let calm = WindScenario::uniform("no_wind", &self.stations, 0.0);
        Ok(vec![
            ("no_wind".into(), apply_scenario(&self.case, &self.farms, &self.stations, &calm, params)?),
            ("max_wind".into(), apply_full_output(&self.case, &self.farms)?),
        ])
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub id: String,
    pub solution: DcOpfSolution,
    pub tree: MergeTree,
    /// One cut per entry of `k_values`.
    pub cuts: Vec<Partition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedScenario {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ReferenceOutcome {
    pub name: String,
    pub solution: DcOpfSolution,
    pub cuts: Vec<Partition>,
}

#[derive(Debug, Clone)]
pub struct KArtifacts {
    pub k: usize,
    pub similarity: SimilarityMatrix,
    /// Consensus before tiny zones are merged.
    pub raw: Partition,
    pub consensus: Partition,
    /// Statistics averaged over all solved scenarios.
    pub report: ZoneReport,
    /// The consensus zones under each reference scenario.
    pub reference_reports: Vec<(String, ZoneReport)>,
    pub interleaving: Vec<Interleaving>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: PipelineConfig,
    pub config_hash: String,
    pub inputs: Option<Inputs>,
    pub loaded_scenarios: usize,
    pub scenarios: Vec<ScenarioOutcome>,
    pub skipped: Vec<SkippedScenario>,
    pub references: Vec<ReferenceOutcome>,
    /// Reference cases that could not be solved; they do not make a run
    /// partial.
    pub skipped_references: Vec<SkippedScenario>,
    /// Per-bus LMP averaged over solved scenarios.
    pub mean_prices: Vec<f64>,
    pub per_k: Vec<KArtifacts>,
}

impl RunArtifacts {
    /// A run with no results, exported as a bare manifest.
    pub fn empty(config: PipelineConfig) -> Self {
        let config_hash = config_hash(&config, &BTreeMap::new());
        Self {
            config,
            config_hash,
            inputs: None,
            loaded_scenarios: 0,
            scenarios: Vec::new(),
            skipped: Vec::new(),
            references: Vec::new(),
            skipped_references: Vec::new(),
            mean_prices: Vec::new(),
            per_k: Vec::new(),
        }
    }

    /// Whether the skipped share exceeds the configured threshold.
    pub fn is_partial(&self) -> bool {
        self.loaded_scenarios > 0
            && self.skipped.len() as f64 > self.config.max_skipped_fraction * self.loaded_scenarios as f64
    }

    pub fn run_dir_name(&self) -> String {
        format!("run-{}", &self.config_hash[..12])
    }
}

/// One solved and clustered case.
#[derive(Debug, Clone)]
pub struct Solved {
    pub solution: DcOpfSolution,
    pub tree: MergeTree,
    /// One cut per entry of `k_values`.
    pub cuts: Vec<Partition>,
    pub basis: Basis,
}

/// Solves one scenario, optionally from a starting basis, and cuts its merge
/// tree at every K.
pub fn solve_scenario(
    case: &NetworkCase,
    graph: &AdjacencyGraph,
    cfg: &PipelineConfig,
    start: Option<&Basis>,
) -> Result<Solved, PipelineError> {
    let (solution, basis) = solve_dcopf_from(case, &cfg.opf_options(), start)?;
    let tree = ward_cluster(&solution.lmp, graph)?;
    let cuts = cfg
        .k_values
        .iter()
        .map(|&k| cut_tree(&tree, k))
        .collect::<Result<_, _>>()?;
    Ok(Solved {
        solution,
        tree,
        cuts,
        basis,
    })
}

/// Reference cases solved from scratch, in order.
pub struct References {
    pub solved: Vec<ReferenceOutcome>,
    pub skipped: Vec<SkippedScenario>,
    /// Basis of the first reference solved. Every weather scenario starts
    /// from it, so each scenario's result is fixed by the inputs alone and
    /// not by which worker solved what before it.
    pub warm_start: Option<Basis>,
}

pub fn solve_references(inputs: &Inputs, cfg: &PipelineConfig) -> Result<References, PipelineError> {
    let mut out = References {
        solved: Vec::new(),
        skipped: Vec::new(),
        warm_start: None,
    };
    let cases = inputs
        .reference_cases(&cfg.wind_params())
        .map_err(|source| PipelineError::Wind {
            path: cfg.weather.clone().unwrap_or_default(),
            source,
        })?;
    for (name, case) in cases {
        match solve_scenario(&case, &inputs.graph, cfg, None) {
            Ok(s) => {
                out.warm_start.get_or_insert(s.basis);
                out.solved.push(ReferenceOutcome {
                    name,
                    solution: s.solution,
                    cuts: s.cuts,
                });
            }
            Err(e) => {
                warn!("reference scenario {name} skipped: {e}");
                out.skipped.push(SkippedScenario {
                    id: name,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Runs the full sweep. Results depend only on the config and the inputs,
/// not on the thread count.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunArtifacts, PipelineError> {
    let inputs = load_inputs(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    pool.install(|| run_with_inputs(cfg, inputs))
}

fn run_with_inputs(cfg: &PipelineConfig, inputs: Inputs) -> Result<RunArtifacts, PipelineError> {
    let params = cfg.wind_params();
    let n = inputs.case.buses.len();
    info!(
        "{} buses, {} farms, {} scenarios ({} dates dropped)",
        n,
        inputs.farms.len(),
        inputs.scenarios.len(),
        inputs.dropped.len()
    );

    let refs = solve_references(&inputs, cfg)?;
    let start = refs.warm_start.as_ref();
    let results: Vec<Result<ScenarioOutcome, SkippedScenario>> = inputs
        .scenarios
        .par_iter()
        .map(|sc| {
            let skip = |e: String| SkippedScenario {
                id: sc.id.clone(),
                reason: e,
            };
            let case = inputs.scenario_case(sc, &params).map_err(|e| skip(e.to_string()))?;
            let s = solve_scenario(&case, &inputs.graph, cfg, start).map_err(|e| skip(e.to_string()))?;
            Ok(ScenarioOutcome {
                id: sc.id.clone(),
                solution: s.solution,
                tree: s.tree,
                cuts: s.cuts,
            })
        })
        .collect();
    let mut scenarios = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(o) => scenarios.push(o),
            Err(s) => {
                warn!("skipping scenario {}: {}", s.id, s.reason);
                skipped.push(s);
            }
        }
    }
    if scenarios.is_empty() {
        return Err(PipelineError::AllInfeasible(skipped.len()));
    }
    info!("{} scenarios solved, {} skipped", scenarios.len(), skipped.len());

    let References {
        solved: references,
        skipped: skipped_references,
        ..
    } = refs;

    let m = scenarios.len() as f64;
    let mut mean_prices = vec![0.0; n];
    for o in &scenarios {
        for (acc, p) in mean_prices.iter_mut().zip(&o.solution.lmp) {
            *acc += p;
        }
    }
    for p in &mut mean_prices {
        *p /= m;
    }

    let solutions: Vec<DcOpfSolution> = scenarios.iter().map(|o| o.solution.clone()).collect();
    let mask = cfg.connectivity_mask.then_some(&inputs.graph);
    let mut per_k = Vec::new();
    for (ki, &k) in cfg.k_values.iter().enumerate() {
        let cuts: Vec<Partition> = if cfg.pooled_k {
            scenarios.iter().flat_map(|o| o.cuts.iter().cloned()).collect()
        } else {
            scenarios.iter().map(|o| o.cuts[ki].clone()).collect()
        };
        let similarity = build_similarity(&cuts)?;
        let raw = consensus_cluster(&similarity, k, mask)?;
        let consensus = merge_tiny_zones(&raw, cfg.min_zone_size, &mean_prices, &inputs.graph)?;
        if consensus.k() != raw.k() {
            info!("K = {k}: merged tiny zones, {} zones remain", consensus.k());
        }
        let report = zone_report(&consensus, &solutions, &inputs.case, ReportMode::Average);
        let reference_reports = references
            .iter()
            .map(|r| {
                (
                    r.name.clone(),
                    zone_report(&consensus, std::slice::from_ref(&r.solution), &inputs.case, ReportMode::Single),
                )
            })
            .collect();
        let interleaving = detect_interleaving(&consensus, &inputs.case);
        for w in &interleaving {
            warn!(
                "K = {k}: {} node(s) of zone {} lie inside the bounding box of zone {}",
                w.nodes, w.zone, w.other
            );
        }
        per_k.push(KArtifacts {
            k,
            similarity,
            raw,
            consensus,
            report,
            reference_reports,
            interleaving,
        });
    }

    Ok(RunArtifacts {
        config: cfg.clone(),
        config_hash: config_hash(cfg, &inputs.digests),
        loaded_scenarios: inputs.scenarios.len(),
        inputs: Some(inputs),
        scenarios,
        skipped,
        references,
        skipped_references,
        mean_prices,
        per_k,
    })
}

/// Pair agreement between the two reference scenarios' cuts, per K.
pub fn reference_agreement(art: &RunArtifacts) -> Vec<(usize, f64)> {
    match art.references.as_slice() {
        [a, b, ..] => art
            .config
            .k_values
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, pair_agreement(&a.cuts[i], &b.cuts[i])))
            .collect(),
        _ => Vec::new(),
    }
}

/// Peak resident set size of this process in bytes, where the platform
/// reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
