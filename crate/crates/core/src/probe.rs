//! Linear probes measuring how much region identity a latent space carries.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RegionGraph;
use crate::math;
use crate::model::{encode, mean_pool, ModelParams, SampleMode};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latent {
    Agnostic,
    Specific,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8, iterations: 300, learning_rate: 0.5, l2: 1e-4, seed: 0x9E0B }
    }
}

/// Pooled deterministic latent (mean of mu over nodes) of one graph.
pub fn pooled_latent(params: &ModelParams, graph: &RegionGraph, latent: Latent) -> Result<Vec<f64>> {
    let encoder = match latent {
        Latent::Agnostic => &params.agnostic,
        Latent::Specific => &params.specific,
    };
    let sample = encode(&graph.node_features, graph.adjacency(), encoder, SampleMode::Deterministic)?;
    Ok(mean_pool(&sample.mu).into_vec())
}

/// Held-out accuracy of a softmax regression trained on a shuffled split.
pub fn probe_accuracy(features: &[Vec<f64>], labels: &[usize], classes: usize, config: &ProbeConfig) -> Result<f64> {
    if features.len() != labels.len() || features.len() < 2 {
        return Err(Error::contract("probe needs at least two labelled samples"));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::contract("probe label out of range"));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::contract("probe features have inconsistent widths"));
    }
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng_from(config.seed, 0));
    let cut = ((features.len() as f64 * config.train_fraction) as usize).clamp(1, features.len() - 1);
    let (train, test) = order.split_at(cut);

    // standardize with training statistics
    let mut mean = alloc::vec![0.0; dim];
    let mut scale = alloc::vec![0.0; dim];
    for &i in train {
        for (m, x) in mean.iter_mut().zip(&features[i]) {
            *m += x / train.len() as f64;
        }
    }
    for &i in train {
        for ((s, m), x) in scale.iter_mut().zip(&mean).zip(&features[i]) {
            *s += (x - m) * (x - m) / train.len() as f64;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { 1.0 / math::sqrt(*s) } else { 0.0 };
    }
    let standardized = |i: usize| -> Vec<f64> {
        features[i].iter().zip(&mean).zip(&scale).map(|((x, m), s)| (x - m) * s).collect()
    };
    let xs_train: Vec<Vec<f64>> = train.iter().map(|&i| standardized(i)).collect();

    // weights [classes × (dim + 1)], last column is the bias
    let width = dim + 1;
    let mut w = alloc::vec![0.0; classes * width];
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..classes)
            .map(|c| {
                let row = &w[c * width..(c + 1) * width];
                row[dim] + row[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    };
    let n = xs_train.len() as f64;
    for _ in 0..config.iterations {
        let mut grad = alloc::vec![0.0; classes * width];
        for (x, &i) in xs_train.iter().zip(train) {
            let z = logits(&w, x);
            let lse = math::log_sum_exp(&z);
            for c in 0..classes {
                let p = math::exp(z[c] - lse) - f64::from(u8::from(c == labels[i]));
                let row = &mut grad[c * width..(c + 1) * width];
                for (g, xv) in row[..dim].iter_mut().zip(x) {
                    *g += p * xv / n;
                }
                row[dim] += p / n;
            }
        }
        for (k, (wv, g)) in w.iter_mut().zip(&grad).enumerate() {
            let decay = if k % width == dim { 0.0 } else { config.l2 * *wv };
            *wv -= config.learning_rate * (g + decay);
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let z = logits(&w, &standardized(i));
            argmax(&z) == labels[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Probe accuracy for region identity on one latent space. `graphs` pairs each
/// snapshot with its region index in `0..classes`.
pub fn probe_region_leakage(
    params: &ModelParams,
    graphs: &[(&RegionGraph, usize)],
    classes: usize,
    latent: Latent,
    config: &ProbeConfig,
) -> Result<f64> {
    let distinct: alloc::collections::BTreeSet<usize> = graphs.iter().map(|(_, l)| *l).collect();
    if distinct.len() < 2 {
        return Err(Error::config("probing needs graphs from at least two regions"));
    }
    let features = graphs.iter().map(|(g, _)| pooled_latent(params, g, latent)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = graphs.iter().map(|(_, l)| *l).collect();
    probe_accuracy(&features, &labels, classes, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal_matrix;
    use rand::Rng;

    #[test]
    fn one_hot_latents_are_perfectly_separable() {
        let labels: Vec<usize> = (0..150).map(|i| i % 3).collect();
        let features: Vec<Vec<f64>> = labels.iter().map(|&l| (0..3).map(|c| f64::from(u8::from(c == l))).collect()).collect();
        assert_eq!(probe_accuracy(&features, &labels, 3, &ProbeConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn shuffled_labels_sit_near_chance() {
        let mut rng = rng_from(5, 0);
        let noise = standard_normal_matrix(&mut rng, 600, 8);
        let features: Vec<Vec<f64>> = (0..600).map(|i| noise.row(i).to_vec()).collect();
        let labels: Vec<usize> = (0..600).map(|_| rng.random_range(0..3)).collect();
        let acc = probe_accuracy(&features, &labels, 3, &ProbeConfig::default()).unwrap();
        assert!((acc - 1.0 / 3.0).abs() <= 0.1, "{acc}");
    }

    #[test]
    fn constant_features_do_not_break_standardization() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let features: Vec<Vec<f64>> = labels.iter().map(|_| alloc::vec![2.0]).collect();
        let acc = probe_accuracy(&features, &labels, 2, &ProbeConfig::default()).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
