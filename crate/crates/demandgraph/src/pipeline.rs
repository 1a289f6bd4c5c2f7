//! Stage functions shared by the subcommands and the end-to-end run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use demandgraph_core::baselines::run_baseline;
use demandgraph_core::demand::{count_demand, slots_covering, CountReport, DemandTensor};
use demandgraph_core::eval::{evaluate_unseen, MetricsReport};
use demandgraph_core::graph::{
    build_adjacency, build_snapshot, demand_scale, node_features, EdgeWeights, FeatureSpec, RegionGraph, RegionTopology,
};
use demandgraph_core::grid::HexGrid;
use demandgraph_core::model::{forecast, ModelParams};
use demandgraph_core::probe::{probe_region_leakage, Latent, ProbeConfig};
use demandgraph_core::synth::{generate_region, RateModel, SynthConfig};
use demandgraph_core::time::{SlotClock, SlotIndex};
use demandgraph_core::train::{train_with, ExperimentConfig, TrainingHistory};
use demandgraph_core::trip::{clip_to_region, ClipReport, RegionDataset};
use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{DatasetConfig, RunConfig, Thresholds};
use crate::error::{AppError, Result, StageExt};
use crate::history::{HistoryLine, HistoryPhase, HistoryWriter, ProbeMetrics};
use crate::ingest::{parse_trip_file, IngestReport};
use crate::report::render_report;
use crate::snapshots::{self, SnapshotSet};
use crate::tensor_io::{self, RegionFiles};

/// A gridded region: trips, cells, counts and trip-derived edge weights.
#[derive(Debug, Clone)]
pub struct Region {
    pub dataset: RegionDataset,
    pub files: RegionFiles,
}

impl Region {
    pub fn id(&self) -> &str {
        &self.dataset.region_id
    }
}

/// Edge weights from trips inside the tensor's time window.
pub fn window_edges(grid: &HexGrid, dataset: &RegionDataset, tensor: &DemandTensor) -> EdgeWeights {
    let clock = tensor.clock;
    let window = (clock.epoch, clock.slot_start(SlotIndex(tensor.slots())));
    build_adjacency(grid, dataset, Some(window))
}

pub fn synthetic_regions(config: &SynthConfig) -> Result<Vec<Region>> {
    config.validate()?;
    (0..config.n_regions())
        .map(|i| {
            let r = generate_region(config, i)?;
            let edges = window_edges(&r.grid, &r.dataset, &r.counts);
            Ok(Region { dataset: r.dataset, files: RegionFiles { grid: r.grid, tensor: r.counts, edges } })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub region_id: String,
    pub ingest: IngestReport,
    pub clip: ClipReport,
    pub count: CountReport,
    pub cells: usize,
    pub slots: usize,
}

/// Trips already clipped to their polygon, gridded and counted.
pub fn grid_region(dataset: RegionDataset, edge_km: f64, interval_min: u32) -> Result<(Region, CountReport)> {
    let grid = HexGrid::build(&dataset.polygon, edge_km)?;
    let first = dataset
        .trips
        .iter()
        .map(|t| t.pickup_time)
        .min()
        .ok_or_else(|| AppError::Config(format!("region `{}` has no trips inside its polygon", dataset.region_id)))?;
    let clock = SlotClock::starting_at_local_midnight(first, interval_min, dataset.utc_offset_min)?;
    let slots = slots_covering(&dataset, &clock);
    let (tensor, count) = count_demand(&dataset, &grid, clock, slots)?;
    let edges = window_edges(&grid, &dataset, &tensor);
    Ok((Region { dataset, files: RegionFiles { grid, tensor, edges } }, count))
}

pub fn ingest_region(config: &DatasetConfig, experiment: &ExperimentConfig) -> Result<(Region, IngestSummary)> {
    let dialect = config.dialect()?;
    let offset = config.utc_offset_min()?;
    let polygon = crate::geojson::read_polygon(&config.polygon)?;
    let (trips, mut ingest) = parse_trip_file(&config.trips, dialect, offset)?;
    ingest.check_quality()?;
    let (dataset, clip) = clip_to_region(config.region_id.clone(), trips, polygon, offset)?;
    ingest.retained = Some(clip.retained);
    ingest.dropped = Some(clip.dropped);
    let (region, count) = grid_region(dataset, experiment.edge_km, experiment.interval_min)?;
    let summary = IngestSummary {
        region_id: config.region_id.clone(),
        ingest,
        clip,
        count,
        cells: region.files.grid.len(),
        slots: region.files.tensor.slots(),
    };
    Ok((region, summary))
}

pub fn topology(files: &RegionFiles) -> Result<Arc<RegionTopology>> {
    Ok(Arc::new(RegionTopology::new(files.edges.clone(), demand_scale(&files.tensor))?))
}

/// Every snapshot of a region that has full history and a target.
pub fn region_snapshots(files: &RegionFiles, spec: &FeatureSpec) -> Result<Vec<RegionGraph>> {
    let topology = topology(files)?;
    spec.valid_slots(files.tensor.slots())
        .map(|t| Ok(build_snapshot(&files.tensor, &files.grid, &topology, SlotIndex(t), spec, None)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub cell_id: usize,
    pub lat: f64,
    pub lon: f64,
    pub predicted_demand: f64,
}

/// Forecast of slot `t + 1` from history ending at `t` (the last slot by
/// default), one row per cell.
pub fn predict_region(params: &ModelParams, files: &RegionFiles, spec: &FeatureSpec, t: Option<usize>) -> Result<Vec<ForecastRow>> {
    if spec.width() != params.config.input_dim {
        return Err(demandgraph_core::Error::Contract(format!(
            "checkpoint expects {} features, the feature spec gives {}",
            params.config.input_dim,
            spec.width()
        ))
        .into());
    }
    let slots = files.tensor.slots();
    let t = t.unwrap_or(slots.saturating_sub(1));
    if slots < spec.history {
        return Err(demandgraph_core::Error::InsufficientHistory { t, history: spec.history }.into());
    }
    let topology = topology(files)?;
    let x = node_features(&files.tensor, &files.grid, SlotIndex(t), spec, topology.demand_scale, None)?;
    let y = forecast(params, &x, &topology.adjacency_norm)?;
    Ok(files
        .grid
        .cells()
        .iter()
        .zip(y)
        .map(|(c, predicted_demand)| ForecastRow { cell_id: c.id, lat: c.centroid.lat, lon: c.centroid.lon, predicted_demand })
        .collect())
}

pub fn write_forecast(path: &Path, rows: &[ForecastRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::corrupt(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| AppError::corrupt(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_forecast(path: &Path) -> Result<Vec<ForecastRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| AppError::corrupt(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| AppError::corrupt(path, e))).collect()
}

/// Ground-truth rates, `cell_id,slot,rate`, for every cell and slot.
pub fn write_rates(path: &Path, config: &SynthConfig, region_index: usize, cells: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::corrupt(path, e))?;
    w.write_record(["cell_id", "slot", "rate"]).map_err(|e| AppError::corrupt(path, e))?;
    let model = RateModel::new(config, region_index)?;
    for cell in 0..cells {
        for slot in 0..config.total_slots() {
            let rate = model.rate(cell, slot);
            w.write_record([cell.to_string(), slot.to_string(), rate.to_string()]).map_err(|e| AppError::corrupt(path, e))?;
        }
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Outcome of one held-out region.
#[derive(Debug, Clone)]
pub struct LocoRun {
    pub held_out: String,
    pub report: MetricsReport,
    pub history: TrainingHistory,
    pub probe: Option<ProbeMetrics>,
    pub checkpoint: Checkpoint,
}

/// Region probes on every other snapshot of the training regions.
pub fn probe(params: &ModelParams, train: &BTreeMap<String, Vec<RegionGraph>>, seed: u64) -> Result<ProbeMetrics> {
    let pairs: Vec<(&RegionGraph, usize)> = train
        .iter()
        .map(|(id, graphs)| (params.config.region_index(id).expect("training region in vocabulary"), graphs))
        .flat_map(|(label, graphs)| graphs.iter().step_by(2).map(move |g| (g, label)))
        .collect();
    let config = ProbeConfig { seed, ..ProbeConfig::default() };
    let classes = params.config.num_regions();
    Ok(ProbeMetrics {
        agnostic: probe_region_leakage(params, &pairs, classes, Latent::Agnostic, &config)?,
        specific: probe_region_leakage(params, &pairs, classes, Latent::Specific, &config)?,
    })
}

/// Trains with `held_out` excluded, evaluates it and every configured baseline
/// on the same snapshots. Writes `history.jsonl` and `model.ckpt` into `dir`.
pub fn run_loco(
    config: &RunConfig,
    snapshots: &BTreeMap<String, Vec<RegionGraph>>,
    held_out: &str,
    dir: &Path,
) -> Result<LocoRun> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let test = snapshots
        .get(held_out)
        .ok_or_else(|| AppError::Config(format!("evaluation.held_out: no snapshots for `{held_out}`")))?;
    let train: BTreeMap<String, Vec<RegionGraph>> =
        snapshots.iter().filter(|(id, _)| id.as_str() != held_out).map(|(k, v)| (k.clone(), v.clone())).collect();
    let experiment = ExperimentConfig { held_out_region: Some(held_out.to_owned()), ..config.experiment.clone() };

    let mut writer = HistoryWriter::create(&dir.join("history.jsonl")).stage("train")?;
    let mut write_error = None;
    let (params, history) = train_with(&experiment, &train, |record, _| {
        info!(
            "[{held_out}] epoch {} total {:.4} reconstruction {:.4} mae {:.4}",
            record.epoch, record.main.total, record.main.reconstruction, record.main.demand_mae
        );
        if let Err(e) = writer.epoch(held_out, record) {
            write_error.get_or_insert(e);
        }
    })
    .stage("train")?;
    if let Some(e) = write_error {
        return Err(e.in_stage("train"));
    }
    writer.bookends(held_out, &history).stage("train")?;
    let checkpoint = Checkpoint { experiment: experiment.clone(), params };
    checkpoint::save(&dir.join("model.ckpt"), &checkpoint).stage("train")?;

    let probe = if config.evaluation.probe {
        let p = probe(&checkpoint.params, &train, experiment.seed).stage("probe")?;
        let line = HistoryLine {
            held_out: held_out.to_owned(),
            epoch: history.epochs.len(),
            phase: HistoryPhase::Probe,
            losses: None,
            probe: Some(p),
        };
        writer.write(&line).stage("probe")?;
        info!("[{held_out}] probe agnostic {:.3} specific {:.3}", p.agnostic, p.specific);
        Some(p)
    } else {
        None
    };

    let mut report = evaluate_unseen(&checkpoint.params, test).stage("evaluate")?;
    report.seed = experiment.seed;
    report.config_fingerprint = config.fingerprint();
    for name in &config.evaluation.baselines {
        info!("[{held_out}] baseline {name}");
        let baseline = run_baseline(name, &train, test, &experiment).stage("baselines")?;
        report.attach_baseline(&baseline);
    }
    Ok(LocoRun { held_out: held_out.to_owned(), report, history, probe, checkpoint })
}

/// Threshold checks for one run; empty means all passed.
pub fn threshold_failures(thresholds: &Thresholds, run: &LocoRun) -> Vec<String> {
    let mut failures = Vec::new();
    let held = &run.held_out;
    let Some(proposed) = run.report.regions.get(held).map(|m| m.accuracy) else {
        return vec![format!("{held}: no metrics")];
    };
    if let Some(min) = thresholds.min_accuracy {
        if proposed < min {
            failures.push(format!("{held}: accuracy {proposed:.4} < {min}"));
        }
    }
    let baseline_acc = |name: &str| run.report.baselines.get(name).and_then(|r| r.get(held)).map(|m| m.accuracy);
    for (name, margin) in &thresholds.min_margin_over {
        match baseline_acc(name) {
            Some(b) if proposed >= b + margin => {}
            Some(b) => failures.push(format!("{held}: accuracy {proposed:.4} is not {margin} above {name} ({b:.4})")),
            None => failures.push(format!("{held}: baseline {name} was not run")),
        }
    }
    if thresholds.beat_all_baselines {
        for (name, per_region) in &run.report.baselines {
            if let Some(b) = per_region.get(held) {
                if proposed < b.accuracy {
                    failures.push(format!("{held}: {name} ({:.4}) beats the proposed model ({proposed:.4})", b.accuracy));
                }
            }
        }
    }
    let probe_needed = thresholds.min_specific_probe.is_some() || thresholds.max_agnostic_probe.is_some();
    match (run.probe, probe_needed) {
        (None, true) => failures.push(format!("{held}: probe thresholds set but probes disabled")),
        (Some(p), _) => {
            if let Some(min) = thresholds.min_specific_probe {
                if p.specific < min {
                    failures.push(format!("{held}: specific probe {:.3} < {min}", p.specific));
                }
            }
            if let Some(max) = thresholds.max_agnostic_probe {
                if p.agnostic > max {
                    failures.push(format!("{held}: agnostic probe {:.3} > {max}", p.agnostic));
                }
            }
        }
        (None, false) => {}
    }
    failures
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eSummary {
    pub config_fingerprint: String,
    pub seed: u64,
    pub probes: BTreeMap<String, ProbeMetrics>,
    pub threshold_failures: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct E2eOutcome {
    pub runs: Vec<LocoRun>,
    pub summary: E2eSummary,
    pub files: Vec<PathBuf>,
}

impl E2eOutcome {
    pub fn passed(&self) -> bool {
        self.summary.threshold_failures.is_empty()
    }

    pub fn reports(&self) -> Vec<MetricsReport> {
        self.runs.iter().map(|r| r.report.clone()).collect()
    }
}

pub fn plan(config: &RunConfig) -> Vec<String> {
    let source = if config.uses_synthetic() {
        format!("synth: generate {} synthetic regions ({} days)", config.synthetic.n_regions(), config.synthetic.days)
    } else {
        format!("ingest: read {} datasets", config.datasets.len())
    };
    let mut out = vec![
        source,
        format!("grid: hexagons with {} km edges, {}-minute slots", config.experiment.edge_km, config.experiment.interval_min),
        format!("snapshots: history {} slots, {} features", config.experiment.features.history, config.experiment.features.width()),
    ];
    for held in config.held_out_regions() {
        out.push(format!("train: hold out {held}, {} epochs", config.experiment.max_epochs));
        out.push(format!("evaluate: {held} with baselines [{}]", config.evaluation.baselines.join(", ")));
    }
    out.push(format!("report: {}", config.out_dir.display()));
    out
}

/// The whole pipeline into `config.out_dir`.
pub fn run_e2e(config: &RunConfig) -> Result<E2eOutcome> {
    config.validate().stage("config")?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;

    let regions = if config.uses_synthetic() {
        info!("generating {} synthetic regions", config.synthetic.n_regions());
        synthetic_regions(&config.synthetic).stage("synth")?
    } else {
        let mut regions = Vec::new();
        for d in &config.datasets {
            info!("ingesting {}", d.trips.display());
            let (region, summary) = ingest_region(d, &config.experiment).stage("ingest")?;
            let path = out.join(format!("ingest_{}.json", d.region_id));
            let text = serde_json::to_string_pretty(&summary).map_err(|e| AppError::corrupt(&path, e))?;
            std::fs::write(&path, text).map_err(|e| AppError::io(&path, e)).stage("ingest")?;
            regions.push(region);
        }
        regions
    };

    let spec = config.experiment.features;
    let snapshot_dir = out.join("snapshots");
    std::fs::create_dir_all(&snapshot_dir).map_err(|e| AppError::io(&snapshot_dir, e))?;
    let mut snapshot_files = BTreeMap::new();
    for region in &regions {
        tensor_io::write_region_dir(&tensor_io::region_dir(&out.join("regions"), region.id()), &region.files.grid, &region.files.tensor, &region.files.edges)
            .stage("grid")?;
        let graphs = region_snapshots(&region.files, &spec).stage("snapshots")?;
        let path = snapshot_dir.join(format!("{}.dgsnap", region.id()));
        snapshots::save(&path, &SnapshotSet { feature_spec: spec, graphs }).stage("snapshots")?;
        snapshot_files.insert(region.id().to_owned(), path);
    }
    // Every consumer reads the files back, so the proposed model and the
    // baselines see identical snapshots.
    let mut snapshots = BTreeMap::new();
    for (id, path) in &snapshot_files {
        snapshots.insert(id.clone(), snapshots::load(path).stage("snapshots")?.graphs);
    }

    let mut runs = Vec::new();
    for held in config.held_out_regions() {
        runs.push(run_loco(config, &snapshots, &held, &out.join("loco").join(&held))?);
    }
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.report.clone()).collect();
    let mut files = render_report(&reports, out).stage("report")?;
    let summary = E2eSummary {
        config_fingerprint: config.fingerprint(),
        seed: config.seed,
        probes: runs.iter().filter_map(|r| r.probe.map(|p| (r.held_out.clone(), p))).collect(),
        threshold_failures: runs.iter().flat_map(|r| threshold_failures(&config.thresholds, r)).collect(),
    };
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| AppError::corrupt(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| AppError::io(&path, e)).stage("report")?;
    files.push(path);
    Ok(E2eOutcome { runs, summary, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_lists_each_held_out_region() {
        let mut c = RunConfig::default();
        c.evaluation.held_out = vec!["metro_d".into()];
        let p = plan(&c);
        assert!(p[0].starts_with("synth"));
        assert_eq!(p.iter().filter(|s| s.starts_with("train")).count(), 1);
        assert!(p.last().unwrap().starts_with("report"));
    }

    #[test]
    fn short_history_is_refused() {
        let cfg = SynthConfig { days: 1, ..SynthConfig::default() };
        let r = synthetic_regions(&cfg).unwrap().remove(0);
        let mut files = r.files.clone();
        let clock = files.tensor.clock;
        files.tensor = DemandTensor::zeros("x", clock, files.grid.len(), 3);
        let experiment = ExperimentConfig { latent_dim: 4, hidden_dim: 4, head_hidden_dim: 4, ..ExperimentConfig::default() };
        let params = ModelParams::init(experiment.model_config(vec!["a".into(), "b".into()]), 1).unwrap();
        let err = predict_region(&params, &files, &experiment.features, None).unwrap_err();
        assert!(matches!(err, AppError::Core(demandgraph_core::Error::InsufficientHistory { .. })));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn forecast_has_a_row_per_cell() {
        let cfg = SynthConfig { days: 1, ..SynthConfig::default() };
        let r = synthetic_regions(&cfg).unwrap().remove(0);
        let experiment = ExperimentConfig { latent_dim: 4, hidden_dim: 4, head_hidden_dim: 4, ..ExperimentConfig::default() };
        let params = ModelParams::init(experiment.model_config(vec!["a".into(), "b".into()]), 1).unwrap();
        let rows = predict_region(&params, &r.files, &experiment.features, None).unwrap();
        assert_eq!(rows.len(), r.files.grid.len());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_forecast(&path, &rows).unwrap();
        assert_eq!(read_forecast(&path).unwrap(), rows);
    }
}
