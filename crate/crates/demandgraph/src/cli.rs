//! Command-line interface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use demandgraph_core::baselines::run_baseline;
use demandgraph_core::eval::evaluate_unseen;
use demandgraph_core::graph::RegionGraph;
use demandgraph_core::trip::clip_to_region;
use log::info;

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::error::{AppError, Result, StageExt};
use crate::ingest::{parse_trip_file, write_canonical_file, Dialect};
use crate::pipeline;
use crate::report::render_report;
use crate::snapshots::{self, SnapshotSet};
use crate::tensor_io;

/// Exit code of `e2e` when the run finished but a configured threshold failed.
pub const THRESHOLDS_NOT_MET: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "demandgraph", version, about = "Cross-region taxi demand forecasting")]
pub struct Cli {
    /// Run configuration (TOML); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for generation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (an output file for `predict`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw trip file, clip it to a polygon and write canonical CSV.
    Ingest(IngestArgs),
    /// Grid canonical trips into a region directory.
    Grid(GridArgs),
    /// Generate the synthetic regions of the config.
    Synth,
    /// Train with one region held out.
    Train(TrainArgs),
    /// Evaluate a checkpoint on snapshot files.
    Evaluate(EvaluateArgs),
    /// Forecast the next slot of a region directory.
    Predict(PredictArgs),
    /// Run every stage from the config.
    E2e(E2eArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub dialect: String,
    #[arg(long)]
    pub input: PathBuf,
    /// GeoJSON service-area outline.
    #[arg(long)]
    pub polygon: PathBuf,
    #[arg(long)]
    pub region_id: String,
    #[arg(long, allow_hyphen_values = true)]
    pub utc_offset_min: Option<i32>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Canonical trip CSV, e.g. from `ingest`.
    #[arg(long)]
    pub trips: PathBuf,
    #[arg(long)]
    pub polygon: PathBuf,
    #[arg(long)]
    pub region_id: String,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0)]
    pub utc_offset_min: i32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Region to exclude; defaults to the first configured held-out region.
    #[arg(long)]
    pub held_out: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Snapshot files of the regions to evaluate.
    #[arg(long, required = true, num_args = 1..)]
    pub snapshots: Vec<PathBuf>,
    /// Snapshot files of the training regions, needed for baselines.
    #[arg(long, num_args = 1..)]
    pub train_snapshots: Vec<PathBuf>,
    #[arg(long = "baseline")]
    pub baselines: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Region directory written by `grid` or `synth`.
    #[arg(long)]
    pub region: PathBuf,
    /// Last observed slot; defaults to the final slot of the history.
    #[arg(long)]
    pub slot: Option<usize>,
}

#[derive(Debug, Args)]
pub struct E2eArgs {
    /// Print the stage plan and exit.
    #[arg(long)]
    pub dry_run: bool,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AppError::corrupt(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| AppError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

fn load_snapshot_files(paths: &[PathBuf]) -> Result<(Vec<RegionGraph>, Option<demandgraph_core::graph::FeatureSpec>)> {
    let mut graphs = Vec::new();
    let mut spec = None;
    for p in paths {
        let set = snapshots::load(p)?;
        if spec.is_some_and(|s| s != set.feature_spec) {
            return Err(AppError::corrupt(p, "feature spec differs from the other snapshot files"));
        }
        spec = Some(set.feature_spec);
        graphs.extend(set.graphs);
    }
    Ok((graphs, spec))
}

fn group(graphs: Vec<RegionGraph>) -> BTreeMap<String, Vec<RegionGraph>> {
    let mut out: BTreeMap<String, Vec<RegionGraph>> = BTreeMap::new();
    for g in graphs {
        out.entry(g.region_id.clone()).or_default().push(g);
    }
    out
}

/// Runs the parsed command; the returned value is the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let config = load_config(&cli)?;
    let out = config.out_dir.clone();
    match cli.command {
        Command::Ingest(args) => {
            let dialect: Dialect = args.dialect.parse()?;
            let offset = args.utc_offset_min.unwrap_or(dialect.default_utc_offset_min());
            let polygon = crate::geojson::read_polygon(&args.polygon).stage("ingest")?;
            let (trips, mut report) = parse_trip_file(&args.input, dialect, offset).stage("ingest")?;
            report.check_quality().stage("ingest")?;
            let (dataset, clip) = clip_to_region(args.region_id, trips, polygon, offset).stage("ingest")?;
            report.retained = Some(clip.retained);
            report.dropped = Some(clip.dropped);
            create_dir(&out)?;
            write_canonical_file(&out.join("trips.csv"), &dataset.trips)?;
            write_json(&out.join("ingest_report.json"), &report)?;
            info!("{} rows, {} malformed, {} retained", report.rows, report.malformed, clip.retained);
        }
        Command::Grid(args) => {
            let polygon = crate::geojson::read_polygon(&args.polygon).stage("grid")?;
            let (trips, _) = parse_trip_file(&args.trips, Dialect::CanonicalCsv, 0).stage("grid")?;
            let (dataset, clip) = clip_to_region(args.region_id, trips, polygon, args.utc_offset_min).stage("grid")?;
            let (region, count) =
                pipeline::grid_region(dataset, config.experiment.edge_km, config.experiment.interval_min).stage("grid")?;
            let files = &region.files;
            tensor_io::write_region_dir(&out, &files.grid, &files.tensor, &files.edges).stage("grid")?;
            info!(
                "{} cells, {} slots, {} trips counted, {} outside the polygon",
                files.grid.len(),
                files.tensor.slots(),
                count.counted,
                clip.dropped
            );
        }
        Command::Synth => {
            let regions = pipeline::synthetic_regions(&config.synthetic).stage("synth")?;
            for (i, region) in regions.iter().enumerate() {
                let dir = tensor_io::region_dir(&out, region.id());
                let f = &region.files;
                tensor_io::write_region_dir(&dir, &f.grid, &f.tensor, &f.edges).stage("synth")?;
                write_canonical_file(&dir.join("trips.csv"), &region.dataset.trips).stage("synth")?;
                pipeline::write_rates(&dir.join("rates.csv"), &config.synthetic, i, f.grid.len()).stage("synth")?;
                info!("{}: {} trips", region.id(), region.dataset.trips.len());
            }
        }
        Command::Train(args) => {
            config.validate().stage("config")?;
            let held = args
                .held_out
                .or_else(|| config.experiment.held_out_region.clone())
                .or_else(|| config.held_out_regions().into_iter().next())
                .ok_or_else(|| AppError::Config("no held-out region configured".into()))?;
            let regions = if config.uses_synthetic() {
                pipeline::synthetic_regions(&config.synthetic).stage("synth")?
            } else {
                config
                    .datasets
                    .iter()
                    .map(|d| pipeline::ingest_region(d, &config.experiment).map(|(r, _)| r))
                    .collect::<Result<Vec<_>>>()
                    .stage("ingest")?
            };
            if !regions.iter().any(|r| r.id() == held) {
                return Err(AppError::Config(format!("held-out region `{held}` is not among the datasets")));
            }
            let spec = config.experiment.features;
            let snap_dir = out.join("snapshots");
            create_dir(&snap_dir)?;
            let mut all = BTreeMap::new();
            for region in &regions {
                let graphs = pipeline::region_snapshots(&region.files, &spec).stage("snapshots")?;
                let path = snap_dir.join(format!("{}.dgsnap", region.id()));
                snapshots::save(&path, &SnapshotSet { feature_spec: spec, graphs: graphs.clone() }).stage("snapshots")?;
                all.insert(region.id().to_owned(), graphs);
            }
            let mut config = config.clone();
            config.evaluation.baselines.clear();
            let run = pipeline::run_loco(&config, &all, &held, &out)?;
            let acc = run.report.regions.get(&held).map_or(f64::NAN, |m| m.accuracy);
            info!("held-out {held}: accuracy {acc:.4}");
        }
        Command::Evaluate(args) => {
            let ck: Checkpoint = checkpoint::load(&args.ckpt).stage("evaluate")?;
            let (test, spec) = load_snapshot_files(&args.snapshots).stage("evaluate")?;
            if let Some(spec) = spec {
                if spec.width() != ck.params.config.input_dim {
                    return Err(AppError::Core(demandgraph_core::Error::Contract(format!(
                        "snapshots carry {} features, the checkpoint expects {}",
                        spec.width(),
                        ck.params.config.input_dim
                    ))))
                    .stage("evaluate");
                }
            }
            let mut report = evaluate_unseen(&ck.params, &test).stage("evaluate")?;
            report.seed = ck.experiment.seed;
            report.config_fingerprint = config.fingerprint();
            if !args.baselines.is_empty() {
                let (train, _) = load_snapshot_files(&args.train_snapshots).stage("baselines")?;
                let train = group(train);
                ck.check_vocabulary(&train.keys().cloned().collect::<Vec<_>>()).stage("baselines")?;
                for name in &args.baselines {
                    let b = run_baseline(name, &train, &test, &ck.experiment).stage("baselines")?;
                    report.attach_baseline(&b);
                }
            }
            for w in &report.warnings {
                log::warn!("{w}");
            }
            render_report(&[report], &out).stage("report")?;
        }
        Command::Predict(args) => {
            let ck = checkpoint::load(&args.ckpt).stage("predict")?;
            let files = tensor_io::read_region_dir(&args.region).stage("predict")?;
            let rows = pipeline::predict_region(&ck.params, &files, &ck.experiment.features, args.slot).stage("predict")?;
            let path = if out.extension().is_some() { out.clone() } else { out.join("forecast.csv") };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            pipeline::write_forecast(&path, &rows).stage("predict")?;
        }
        Command::E2e(args) => {
            if args.dry_run {
                for (i, step) in pipeline::plan(&config).iter().enumerate() {
                    println!("{}. {step}", i + 1);
                }
                return Ok(0);
            }
            let outcome = pipeline::run_e2e(&config)?;
            for f in &outcome.summary.threshold_failures {
                log::warn!("threshold not met: {f}");
            }
            for run in &outcome.runs {
                if let Some(m) = run.report.regions.get(&run.held_out) {
                    println!("{}: accuracy {:.4} mae {:.4}", run.held_out, m.accuracy, m.mae);
                }
            }
            if !outcome.passed() {
                return Ok(THRESHOLDS_NOT_MET);
            }
        }
    }
    Ok(0)
}
