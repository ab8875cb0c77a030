use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use gridzones::lp::Basis;
use gridzones::opf::{summary, write_dispatch_csv, write_flow_csv, write_lmp_csv};
use gridzones::pipeline::{
    export_artifacts, load_inputs, read_run, render_report, run_pipeline, solve_references, solve_scenario, Inputs,
    OutputFormat, PipelineConfig, PipelineError, Solved,
};

#[derive(Parser)]
#[command(name = "gridzones", version, about = "Price zones from nodal prices under many wind scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the case and the wind inputs.
    Validate(ConfigArgs),
    /// Solve the OPF for one scenario.
    Opf(SingleArgs),
    /// Solve one scenario and cut its price clustering at each K.
    Cluster(SingleArgs),
    /// Run the full scenario sweep and write a run directory.
    Run(ConfigArgs),
    /// Print the zone tables of a finished run.
    Report {
        /// Run directory containing manifest.json.
        run_dir: PathBuf,
    },
}

/// Settings shared by every command; each flag overrides the config file.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML file with pipeline settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// MATPOWER case file.
    #[arg(long)]
    case: Option<PathBuf>,
    /// `bus_id,x,y` file.
    #[arg(long)]
    coordinates: Option<PathBuf>,
    /// `farm_id,x,y,capacity_mw,hub_height_m` file.
    #[arg(long)]
    farms: Option<PathBuf>,
    /// `station_id,x,y,date,wind_speed_ms` file.
    #[arg(long)]
    weather: Option<PathBuf>,
    /// Months to keep, e.g. `11,12,1,2`.
    #[arg(long, value_delimiter = ',')]
    months: Option<Vec<u32>>,
    /// Inclusive year range, e.g. `2007-2012`.
    #[arg(long, value_parser = parse_years)]
    years: Option<(i32, i32)>,
    #[arg(long)]
    max_missing_fraction: Option<f64>,
    /// Anemometer height in meters.
    #[arg(long)]
    measurement_height: Option<f64>,
    /// Hellman exponent.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    curve_scale: Option<f64>,
    #[arg(long)]
    curve_steepness: Option<f64>,
    /// Pieces used to linearize polynomial costs.
    #[arg(long)]
    segments: Option<usize>,
    /// Bus id of the angle reference.
    #[arg(long)]
    slack: Option<u32>,
    #[arg(long)]
    binding_tol: Option<f64>,
    /// Zone counts, e.g. `2,3,4`.
    #[arg(long = "k", value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    /// Merge zones with fewer nodes than this; 0 disables merging.
    #[arg(long)]
    min_zone_size: Option<usize>,
    /// Only merge clusters joined by a branch during consensus.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    connectivity_mask: Option<bool>,
    /// Use the cuts of every K in each consensus.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pooled_k: Option<bool>,
    #[arg(long)]
    max_skipped_fraction: Option<f64>,
    /// Outputs to write: csv, dot, similarity, trees.
    #[arg(long, value_delimiter = ',', value_parser = parse_format)]
    formats: Option<Vec<OutputFormat>>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SingleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Scenario id (a date) or `no_wind` / `max_wind`; defaults to the first.
    #[arg(long)]
    scenario: Option<String>,
    /// Directory for the CSV outputs; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_years(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s.split_once('-').ok_or("expected FROM-TO")?;
    let a = a.trim().parse().map_err(|_| format!("bad year `{a}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad year `{b}`"))?;
    Ok((a, b))
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown format `{s}`"))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! over {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$field = v.clone(); })*
            };
        }
        over!(
            case => case,
            months => months,
            max_missing_fraction => max_missing_fraction,
            measurement_height => measurement_height,
            alpha => hellman_exponent,
            curve_scale => curve_scale,
            curve_steepness => curve_steepness,
            segments => polynomial_segments,
            binding_tol => binding_tol,
            k_values => k_values,
            min_zone_size => min_zone_size,
            connectivity_mask => connectivity_mask,
            pooled_k => pooled_k,
            max_skipped_fraction => max_skipped_fraction,
            formats => formats,
            threads => threads,
            output_dir => output_dir,
        );
        if self.coordinates.is_some() {
            c.coordinates = self.coordinates.clone();
        }
        if self.farms.is_some() {
            c.farms = self.farms.clone();
        }
        if self.weather.is_some() {
            c.weather = self.weather.clone();
        }
        if self.years.is_some() {
            c.years = self.years;
        }
        if self.slack.is_some() {
            c.slack = self.slack;
        }
        // Relative paths in a config file are taken relative to the file.
        if let Some(base) = self.config.as_deref().and_then(Path::parent) {
            let rebase = |p: &mut PathBuf, flag_given: bool| {
                if !flag_given && p.is_relative() && !p.as_os_str().is_empty() {
                    *p = base.join(&*p);
                }
            };
            rebase(&mut c.case, self.case.is_some());
            rebase(&mut c.output_dir, self.output_dir.is_some());
            for (p, given) in [
                (&mut c.coordinates, self.coordinates.is_some()),
                (&mut c.farms, self.farms.is_some()),
                (&mut c.weather, self.weather.is_some()),
            ] {
                if let Some(p) = p {
                    rebase(p, given);
                }
            }
        }
        Ok(c)
    }
}

enum Failure {
    Pipeline(PipelineError),
    Io(io::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

/// The requested case with the basis the sweep would start it from: none for
/// the reference cases themselves, the shared warm start otherwise.
fn scenario_case(
    inputs: &Inputs,
    cfg: &PipelineConfig,
    wanted: Option<&str>,
) -> Result<(String, gridzones::case::NetworkCase, Option<Basis>), PipelineError> {
    let params = cfg.wind_params();
    let wind_err = |source| PipelineError::Wind {
        path: cfg.weather.clone().unwrap_or_default(),
        source,
    };
    if let Some(name) = wanted {
        if let Some((n, c)) = inputs
            .reference_cases(&params)
            .map_err(wind_err)?
            .into_iter()
            .find(|(n, _)| n == name)
        {
            return Ok((n, c, None));
        }
    }
    let sc = match wanted {
        Some(id) => inputs
            .scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| PipelineError::Config(format!("no scenario `{id}`")))?,
        None => &inputs.scenarios[0],
    };
    let case = inputs.scenario_case(sc, &params).map_err(wind_err)?;
    Ok((sc.id.clone(), case, solve_references(inputs, cfg)?.warm_start))
}

fn emit(out: Option<&Path>, name: &str, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
            let path = dir.join(name);
            let mut buf = Vec::new();
            write(&mut buf)?;
            fs::write(&path, buf).map_err(|e| PipelineError::io(&path, e))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Validate(args) => {
            let cfg = args.resolve()?;
            let inputs = load_inputs(&cfg)?;
            let case = &inputs.case;
            println!(
                "case ok: {} buses, {} generators, {} branches, {:.3} GW demand, {:.3} GW capacity",
                case.buses.len(),
                case.generators.len(),
                case.branches.len(),
                case.total_demand() / 1000.0,
                case.total_capacity() / 1000.0
            );
            println!(
                "wind: {} farms, {} stations, {} scenarios, {} dates dropped",
                inputs.farms.len(),
                inputs.stations.len(),
                inputs.scenarios.len(),
                inputs.dropped.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Opf(args) => {
            let cfg = args.config.resolve()?;
            let inputs = load_inputs(&cfg)?;
            let (id, case, start) = scenario_case(&inputs, &cfg, args.scenario.as_deref())?;
            let (sol, _) = gridzones::opf::solve_dcopf_from(&case, &cfg.opf_options(), start.as_ref())
                .map_err(PipelineError::from)?;
            info!("scenario {id}: objective {}", sol.objective);
            let out = args.out.as_deref();
            let gen_buses: Vec<u32> = case.generators.iter().map(|g| g.bus).collect();
            emit(out, "lmp.csv", |w| write_lmp_csv(&sol, w))?;
            if out.is_some() {
                emit(out, "flows.csv", |w| write_flow_csv(&sol, w))?;
                emit(out, "dispatch.csv", |w| write_dispatch_csv(&sol, &gen_buses, w))?;
                emit(out, "summary.json", |w| {
                    serde_json::to_writer_pretty(&mut *w, &summary(&sol))?;
                    writeln!(w)
                })?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Cluster(args) => {
            let cfg = args.config.resolve()?;
            let inputs = load_inputs(&cfg)?;
            let (id, case, start) = scenario_case(&inputs, &cfg, args.scenario.as_deref())?;
            let Solved {
                solution: sol,
                tree,
                cuts,
                ..
            } = solve_scenario(&case, &inputs.graph, &cfg, start.as_ref())?;
            info!("scenario {id}: {} binding branches", sol.binding_branches.len());
            let bus_ids: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
            let out = args.out.as_deref();
            for (k, cut) in cfg.k_values.iter().zip(&cuts) {
                if out.is_none() {
                    println!("# K = {k}");
                }
                emit(out, &format!("zones_k{k}.csv"), |w| cut.write_csv(&bus_ids, w))?;
            }
            if out.is_some() {
                emit(out, "lmp.csv", |w| write_lmp_csv(&sol, w))?;
                emit(out, "tree.json", |w| w.write_all(tree.to_json().as_bytes()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let art = run_pipeline(&cfg)?;
            let dir = export_artifacts(&art, &cfg.output_dir)?;
            let view = read_run(&dir)?;
            print!("{}", render_report(&view)?);
            println!("\nartifacts in {}", dir.display());
            if art.is_partial() {
                error!(
                    "{} of {} scenarios skipped, above the allowed share",
                    art.skipped.len(),
                    art.loaded_scenarios
                );
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { run_dir } => {
            let view = read_run(&run_dir)?;
            print!("{}", render_report(&view)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Pipeline(e)) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(Failure::Io(e)) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
