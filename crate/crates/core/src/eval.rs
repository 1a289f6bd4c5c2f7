//! One-off accuracy, MAE and the unseen-region report.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RegionGraph;
use crate::model::{forecast, ModelParams};

/// A prediction counts as correct when its absolute error is below this.
pub const ONE_OFF_THRESHOLD: f64 = 2.0;

/// Fraction of predictions with `|pred - actual| < 2`, on raw values.
pub fn accuracy_one_off(pred: &[f64], actual: &[f64]) -> Result<f64> {
    accuracy_within(pred, actual, ONE_OFF_THRESHOLD)
}

/// Fraction of predictions with absolute error strictly below `threshold`.
pub fn accuracy_within(pred: &[f64], actual: &[f64], threshold: f64) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::contract("prediction and target lengths differ"));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    let hits = pred.iter().zip(actual).filter(|(p, y)| (*p - *y).abs() < threshold).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn mean_absolute_error(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::contract("prediction and target lengths differ"));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    Ok(pred.iter().zip(actual).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub mae: f64,
    /// Evaluated node predictions (snapshots × nodes).
    pub predictions: usize,
    pub snapshots: usize,
}

impl Metrics {
    pub fn from_predictions(pred: &[f64], actual: &[f64], snapshots: usize) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy_one_off(pred, actual)?,
            mae: mean_absolute_error(pred, actual)?,
            predictions: pred.len(),
            snapshots,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub train_regions: Vec<String>,
    /// Metrics per evaluated region.
    pub regions: BTreeMap<String, Metrics>,
    /// Baseline name → region → metrics, evaluated on the same snapshots.
    pub baselines: BTreeMap<String, BTreeMap<String, Metrics>>,
    pub config_fingerprint: String,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn new(method: impl Into<String>, train_regions: Vec<String>) -> Self {
        Self {
            method: method.into(),
            train_regions,
            regions: BTreeMap::new(),
            baselines: BTreeMap::new(),
            config_fingerprint: String::new(),
            seed: 0,
            warnings: Vec::new(),
        }
    }

    /// Attaches another report's per-region metrics as a baseline entry.
    pub fn attach_baseline(&mut self, baseline: &MetricsReport) {
        self.baselines.insert(baseline.method.clone(), baseline.regions.clone());
    }
}

/// Metrics of `predict` over snapshots grouped by region.
pub fn evaluate_with<F>(graphs: &[RegionGraph], mut predict: F) -> Result<BTreeMap<String, Metrics>>
where
    F: FnMut(&RegionGraph) -> Result<Vec<f64>>,
{
    let mut grouped: BTreeMap<String, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for g in graphs {
        let pred = predict(g)?;
        if pred.len() != g.targets.len() {
            return Err(Error::contract("predictor returned the wrong number of nodes"));
        }
        let entry = grouped.entry(g.region_id.clone()).or_default();
        entry.0.extend(pred);
        entry.1.extend_from_slice(&g.targets);
        entry.2 += 1;
    }
    grouped.into_iter().map(|(region, (p, y, n))| Ok((region, Metrics::from_predictions(&p, &y, n)?))).collect()
}

/// Deterministic forecasts from the agnostic path on unseen-region snapshots.
pub fn evaluate_unseen(params: &ModelParams, test_graphs: &[RegionGraph]) -> Result<MetricsReport> {
    let width = params.config.input_dim;
    if let Some(g) = test_graphs.iter().find(|g| g.node_features.cols() != width) {
        return Err(Error::contract(alloc::format!(
            "snapshot of `{}` has {} features but the model expects {width}",
            g.region_id,
            g.node_features.cols()
        )));
    }
    let mut report = MetricsReport::new("proposed", params.config.regions.clone());
    report.regions = evaluate_with(test_graphs, |g| forecast(params, &g.node_features, g.adjacency()))?;
    for region in report.regions.keys() {
        if params.config.region_index(region).is_some() {
            report.warnings.push(alloc::format!("region `{region}` was part of training"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        assert_eq!(accuracy_one_off(&[1.0, 3.5, 0.0], &[1.0, 3.5, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn error_of_exactly_two_is_wrong() {
        assert_eq!(accuracy_one_off(&[5.0], &[7.0]).unwrap(), 0.0);
        assert_eq!(accuracy_one_off(&[9.0], &[7.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_mixture() {
        let acc = accuracy_one_off(&[5.9, 1.0, 0.0], &[4.0, 4.0, 1.5]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_undefined() {
        assert_eq!(accuracy_one_off(&[], &[]), Err(Error::UndefinedMetric));
        assert_eq!(mean_absolute_error(&[], &[]), Err(Error::UndefinedMetric));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(matches!(accuracy_one_off(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn just_below_threshold_counts() {
        assert_eq!(accuracy_one_off(&[0.0], &[1.999_999_999]).unwrap(), 1.0);
    }

    #[test]
    fn mae_matches_hand_value() {
        assert!((mean_absolute_error(&[1.0, 2.0], &[2.0, 0.0]).unwrap() - 1.5).abs() < 1e-15);
    }
}
