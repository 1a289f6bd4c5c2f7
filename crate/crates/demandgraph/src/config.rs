//! Run configuration (TOML).
//!
//! ```toml
//! seed = 7                          # master seed for generator and training
//! out_dir = "runs/reference"        # relative to this file
//!
//! [experiment]                      # training hyperparameters
//! max_epochs = 20
//!
//! [synthetic]                       # used when no [[datasets]] are given
//! days = 14
//!
//! [[datasets]]                      # real trip files instead of [synthetic]
//! region_id = "nyc"
//! dialect = "nyc_yellow"
//! trips = "data/yellow.csv"
//! polygon = "data/manhattan.geojson"
//!
//! [evaluation]
//! held_out = ["metro_d"]            # empty: every region in turn
//! baselines = ["gcn_direct", "node_embedding_mlp", "graph_ae"]
//!
//! [thresholds]                      # e2e exits 0 only if all hold
//! min_margin_over = { gcn_direct = 0.05 }
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use demandgraph_core::baselines::BASELINE_NAMES;
use demandgraph_core::synth::SynthConfig;
use demandgraph_core::train::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::ingest::Dialect;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub region_id: String,
    pub dialect: String,
    pub trips: PathBuf,
    /// GeoJSON outline of the service area.
    pub polygon: PathBuf,
    /// Overrides the dialect's default UTC offset.
    #[serde(default)]
    pub utc_offset_min: Option<i32>,
}

impl DatasetConfig {
    pub fn dialect(&self) -> Result<Dialect> {
        self.dialect.parse::<Dialect>().map_err(|e| AppError::Config(format!("datasets.dialect: {e}")))
    }

    pub fn utc_offset_min(&self) -> Result<i32> {
        Ok(self.utc_offset_min.unwrap_or(self.dialect()?.default_utc_offset_min()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Regions to hold out, one LOCO run each; empty means all regions.
    pub held_out: Vec<String>,
    pub baselines: Vec<String>,
    /// Run the latent region probes after training.
    pub probe: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { held_out: Vec::new(), baselines: BASELINE_NAMES.iter().map(|s| s.to_string()).collect(), probe: true }
    }
}

/// Conditions `e2e` checks on every held-out region.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub min_accuracy: Option<f64>,
    /// Baseline name → required accuracy lead of the proposed model.
    pub min_margin_over: BTreeMap<String, f64>,
    /// Proposed accuracy must be at least every baseline's.
    pub beat_all_baselines: bool,
    pub min_specific_probe: Option<f64>,
    pub max_agnostic_probe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub experiment: ExperimentConfig,
    pub synthetic: SynthConfig,
    pub datasets: Vec<DatasetConfig>,
    pub evaluation: EvaluationConfig,
    pub thresholds: Thresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = ExperimentConfig::default().seed;
        Self {
            seed,
            out_dir: PathBuf::from("out"),
            experiment: ExperimentConfig::default(),
            synthetic: SynthConfig::default(),
            datasets: Vec::new(),
            evaluation: EvaluationConfig::default(),
            thresholds: Thresholds::default(),
        }
        .with_seed(seed)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| AppError::Config(e.message().to_owned() + &span_hint(&e)))?;
        let seed = config.seed;
        Ok(config.with_seed(seed))
    }

    /// Loads `path` and resolves every relative path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            AppError::Config(msg) => AppError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for d in &mut self.datasets {
            fix(&mut d.trips);
            fix(&mut d.polygon);
        }
    }

    /// The master seed replaces the experiment and generator seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.experiment.seed = seed;
        self.synthetic.seed = seed;
        self
    }

    pub fn uses_synthetic(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn region_ids(&self) -> Vec<String> {
        if self.uses_synthetic() {
            self.synthetic.regions.iter().map(|r| r.name.clone()).collect()
        } else {
            self.datasets.iter().map(|d| d.region_id.clone()).collect()
        }
    }

    /// Checks that do not touch the filesystem beyond existence of inputs.
    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        if self.uses_synthetic() {
            self.synthetic.validate()?;
        }
        for (i, d) in self.datasets.iter().enumerate() {
            d.dialect()?;
            if !d.trips.exists() {
                return Err(AppError::Config(format!("datasets[{i}].trips: {} does not exist", d.trips.display())));
            }
            if !d.polygon.exists() {
                return Err(AppError::Config(format!("datasets[{i}].polygon: {} does not exist", d.polygon.display())));
            }
        }
        let ids = self.region_ids();
        for held in &self.evaluation.held_out {
            if !ids.contains(held) {
                return Err(AppError::Config(format!("evaluation.held_out: unknown region `{held}`")));
            }
        }
        for b in self.evaluation.baselines.iter().chain(self.thresholds.min_margin_over.keys()) {
            if !BASELINE_NAMES.contains(&b.as_str()) {
                return Err(demandgraph_core::Error::UnknownBaseline(b.clone()).into());
            }
        }
        Ok(())
    }

    /// Held-out regions in run order.
    pub fn held_out_regions(&self) -> Vec<String> {
        if self.evaluation.held_out.is_empty() {
            self.region_ids()
        } else {
            self.evaluation.held_out.clone()
        }
    }

    /// Stable hash of the serialized config, for reports.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(&(&self.experiment, &self.synthetic, &self.datasets, &self.evaluation))
            .unwrap_or_default();
        format!("{:016x}", demandgraph_core::rng::name_stream(&text))
    }
}

fn span_hint(e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => format!(" (at byte {})", span.start),
        None => String::new(),
    }
}
