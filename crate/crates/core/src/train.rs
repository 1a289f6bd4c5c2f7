//! Leave-one-region-out splits and the alternating optimization loop.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureSpec, RegionGraph};
use crate::model::{total_loss, LossBreakdown, LossWeights, ModelConfig, ModelParams, Phase};
use crate::optim::Adam;
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub head_hidden_dim: usize,
    pub edge_km: f64,
    pub interval_min: u32,
    pub features: FeatureSpec,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub held_out_region: Option<String>,
    /// Stop when the epoch main loss has not improved for this many epochs.
    pub patience: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            max_epochs: 50,
            latent_dim: 32,
            hidden_dim: 64,
            head_hidden_dim: 64,
            edge_km: 1.4,
            interval_min: 30,
            features: FeatureSpec::default(),
            loss_weights: LossWeights::default(),
            seed: 7,
            held_out_region: None,
            patience: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.latent_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::config("learning rate, batch size and layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self, regions: Vec<String>) -> ModelConfig {
        ModelConfig {
            input_dim: self.features.width(),
            hidden1: self.hidden_dim,
            hidden2: self.hidden_dim,
            latent_dim: self.latent_dim,
            head_hidden: self.head_hidden_dim,
            regions,
            loss_weights: self.loss_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_regions: Vec<String>,
    pub test_region: String,
    /// Per training region sample count, filled once snapshots exist.
    pub samples_per_region: BTreeMap<String, usize>,
}

impl SplitPlan {
    pub fn total_samples(&self) -> usize {
        self.samples_per_region.values().sum()
    }

    pub fn with_counts(mut self, datasets: &BTreeMap<String, Vec<RegionGraph>>) -> Self {
        self.samples_per_region =
            self.train_regions.iter().map(|r| (r.clone(), datasets.get(r).map_or(0, Vec::len))).collect();
        self
    }
}

/// One plan per region with that region held out.
pub fn make_loco_splits(regions: &[String]) -> Result<Vec<SplitPlan>> {
    let unique: BTreeSet<&String> = regions.iter().collect();
    if unique.len() != regions.len() {
        return Err(Error::config("region labels must be unique"));
    }
    if regions.len() < 3 {
        return Err(Error::config("leave-one-out needs at least 3 regions so two remain for training"));
    }
    Ok(regions
        .iter()
        .map(|test| SplitPlan {
            train_regions: regions.iter().filter(|r| *r != test).cloned().collect(),
            test_region: test.clone(),
            samples_per_region: BTreeMap::new(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main: LossBreakdown,
    pub adversarial: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Main-phase losses of the untrained model on the evaluation subset.
    pub initial: Option<LossBreakdown>,
    pub epochs: Vec<EpochRecord>,
    /// Main-phase losses of the final model on the same subset.
    pub last: Option<LossBreakdown>,
}

/// Stateful trainer; keeps the last parameters that produced finite losses.
pub struct Trainer<'a> {
    config: ExperimentConfig,
    samples: Vec<(&'a RegionGraph, usize)>,
    params: ModelParams,
    /// Shared by both phases; encoder tensors lead, so the adversarial phase
    /// steps a prefix and heads keep their moments.
    optimizer: Adam,
    steps: u64,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &ExperimentConfig, datasets: &'a BTreeMap<String, Vec<RegionGraph>>) -> Result<Self> {
        config.validate()?;
        if let Some(held) = &config.held_out_region {
            if datasets.contains_key(held) {
                return Err(Error::config(alloc::format!("held-out region `{held}` is among the training datasets")));
            }
        }
        let regions: Vec<String> = datasets.keys().cloned().collect();
        let model_config = config.model_config(regions);
        let params = ModelParams::init(model_config, config.seed)?;
        let width = config.features.width();
        let mut samples = Vec::new();
        for (label, graphs) in datasets.values().enumerate() {
            for g in graphs {
                if g.node_features.cols() != width {
                    return Err(Error::contract(alloc::format!(
                        "graph from `{}` has {} features, expected {width}",
                        g.region_id,
                        g.node_features.cols()
                    )));
                }
                samples.push((g, label));
            }
        }
        if samples.is_empty() {
            return Err(Error::config("no training samples"));
        }
        let optimizer = Adam::new(config.learning_rate, &params.tensors());
        Ok(Self { config: config.clone(), samples, params, optimizer, steps: 0, epoch: 0 })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Mean loss and gradient over a batch, reduced in index order.
    fn batch_gradients(&self, batch: &[usize], phase: Phase) -> Result<(LossBreakdown, ModelParams)> {
        let mut grads = self.params.zeros_like();
        let mut loss = LossBreakdown::default();
        let scale = 1.0 / batch.len() as f64;
        for (pos, &i) in batch.iter().enumerate() {
            let (graph, label) = self.samples[i];
            let seed = derive_seed(self.config.seed, (self.steps << 16) ^ pos as u64);
            let (l, g) = total_loss(graph, label, &self.params, phase, seed)?;
            loss.accumulate(&l, scale);
            grads.add_scaled(&g, scale);
        }
        Ok((loss, grads))
    }

    fn guarded_update(&mut self, grads: &ModelParams, phase: Phase) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NumericalFailure { component: "gradients".into(), detail: alloc::format!("{phase:?} phase") });
        }
        let backup = self.params.clone();
        match phase {
            Phase::Main => self.optimizer.step(self.params.tensors_mut(), grads.tensors()),
            Phase::Adversarial => self.optimizer.step(self.params.encoder_tensors_mut(), grads.encoder_tensors()),
        }
        if !self.params.is_finite() {
            self.params = backup;
            return Err(Error::NumericalFailure { component: "parameters".into(), detail: alloc::format!("{phase:?} update") });
        }
        Ok(())
    }

    /// Main-phase update over `batch` (sample indices).
    pub fn main_step(&mut self, batch: &[usize]) -> Result<LossBreakdown> {
        let (loss, grads) = self.batch_gradients(batch, Phase::Main)?;
        self.guarded_update(&grads, Phase::Main)?;
        self.steps += 1;
        Ok(loss)
    }

    /// Adversarial update over `batch`; heads are left untouched.
    pub fn adversarial_step(&mut self, batch: &[usize]) -> Result<LossBreakdown> {
        let (loss, grads) = self.batch_gradients(batch, Phase::Adversarial)?;
        self.guarded_update(&grads, Phase::Adversarial)?;
        self.steps += 1;
        Ok(loss)
    }

    /// One shuffled pass; each batch runs the main then the adversarial phase.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut rng_from(self.config.seed, 0x5EED_0000 + self.epoch as u64));
        let mut main = LossBreakdown::default();
        let mut adversarial = LossBreakdown::default();
        let total = order.len() as f64;
        for batch in order.chunks(self.config.batch_size) {
            let weight = batch.len() as f64 / total;
            main.accumulate(&self.main_step(batch)?, weight);
            adversarial.accumulate(&self.adversarial_step(batch)?, weight);
        }
        self.epoch += 1;
        Ok(EpochRecord { epoch: self.epoch, main, adversarial })
    }

    /// Main-phase losses without updating, on at most `limit` evenly strided samples.
    pub fn evaluate(&self, limit: usize) -> Result<LossBreakdown> {
        let stride = self.samples.len().div_ceil(limit.max(1)).max(1);
        let picked: Vec<usize> = (0..self.samples.len()).step_by(stride).collect();
        let mut loss = LossBreakdown::default();
        for (pos, &i) in picked.iter().enumerate() {
            let (graph, label) = self.samples[i];
            let (l, _) = total_loss(graph, label, &self.params, Phase::Main, derive_seed(self.config.seed ^ 0xE7A1, pos as u64))?;
            loss.accumulate(&l, 1.0 / picked.len() as f64);
        }
        Ok(loss)
    }
}

/// Evaluation subset size used for the initial/final loss snapshot.
pub const EVAL_SUBSET: usize = 256;

/// Full training run. `on_epoch` sees every epoch record with the current
/// parameters, e.g. for logging or checkpointing.
pub fn train_with<F>(
    config: &ExperimentConfig,
    datasets: &BTreeMap<String, Vec<RegionGraph>>,
    mut on_epoch: F,
) -> Result<(ModelParams, TrainingHistory)>
where
    F: FnMut(&EpochRecord, &ModelParams),
{
    let mut trainer = Trainer::new(config, datasets)?;
    let mut history = TrainingHistory { initial: Some(trainer.evaluate(EVAL_SUBSET)?), ..Default::default() };
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for _ in 0..config.max_epochs {
        let record = trainer.run_epoch()?;
        on_epoch(&record, trainer.params());
        if record.main.total < best {
            best = record.main.total;
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.epochs.push(record);
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    history.last = Some(trainer.evaluate(EVAL_SUBSET)?);
    Ok((trainer.into_params(), history))
}

pub fn train(config: &ExperimentConfig, datasets: &BTreeMap<String, Vec<RegionGraph>>) -> Result<(ModelParams, TrainingHistory)> {
    train_with(config, datasets, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn loco_plans_cover_every_region() {
        let plans = make_loco_splits(&labels(&["A", "B", "C"])).unwrap();
        assert_eq!(plans.len(), 3);
        assert_eq!(plans[0].test_region, "A");
        assert_eq!(plans[0].train_regions, labels(&["B", "C"]));
        assert!(plans.iter().all(|p| !p.train_regions.contains(&p.test_region)));
        let tests: BTreeSet<_> = plans.iter().map(|p| p.test_region.clone()).collect();
        assert_eq!(tests.len(), 3);
    }

    #[test]
    fn loco_needs_three_unique_regions() {
        assert!(matches!(make_loco_splits(&labels(&["A", "B"])), Err(Error::Config(_))));
        assert!(make_loco_splits(&labels(&["A", "A", "B"])).is_err());
    }

    #[test]
    fn defaults_follow_reported_settings() {
        let c = ExperimentConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.max_epochs, c.latent_dim), (1e-4, 64, 50, 32));
        assert_eq!((c.edge_km, c.interval_min, c.features.history), (1.4, 30, 6));
    }
}
