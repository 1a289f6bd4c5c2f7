//! Analytic gradients of every loss against central finite differences.

use std::collections::BTreeMap;
use std::sync::Arc;

use demandgraph_core::graph::{EdgeWeights, RegionGraph, RegionTopology};
use demandgraph_core::model::{total_loss, vgae_loss, KlScale, LossWeights, ModelConfig, ModelParams, Phase};
use demandgraph_core::rng::{rng_from, standard_normal_matrix};
use demandgraph_core::time::SlotIndex;
use rand::Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn five_node_graph(seed: u64, region: &str) -> RegionGraph {
    let mut rng = rng_from(seed, 77);
    let mut weights = BTreeMap::new();
    for (u, v) in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)] {
        let w = 1.0 + rng.random_range(0.0..4.0f64).floor();
        weights.insert((u, v), w);
        weights.insert((v, u), w);
    }
    let topology = RegionTopology::new(EdgeWeights { nodes: 5, weights }, 4.0).unwrap();
    RegionGraph {
        region_id: region.into(),
        topology: Arc::new(topology),
        node_features: standard_normal_matrix(&mut rng, 5, 4),
        targets: (0..5).map(|_| rng.random_range(0..6) as f64 + 0.37).collect(),
        slot: SlotIndex(0),
    }
}

fn params(weights: LossWeights) -> ModelParams {
    let mut cfg = ModelConfig::new(4, 3, vec!["a".into(), "b".into()]);
    cfg.hidden1 = 6;
    cfg.hidden2 = 5;
    cfg.head_hidden = 4;
    cfg.loss_weights = weights;
    let mut p = ModelParams::init(cfg, 5).unwrap();
    // non-zero biases so bias gradients are exercised away from kinks
    let mut rng = rng_from(5, 99);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    p
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-10 {
        diff
    } else {
        diff / na.max(nb)
    }
}

/// Returns the worst per-tensor relative error.
fn check(weights: LossWeights, phase: Phase, graph: &RegionGraph, label: usize) -> f64 {
    let base = params(weights);
    let seed = 1234;
    let (_, grads) = total_loss(graph, label, &base, phase, seed).unwrap();
    // heads are constants in the adversarial phase; only encoder tensors are differentiated
    let checked = match phase {
        Phase::Main => grads.tensors().len(),
        Phase::Adversarial => grads.encoder_tensors().len(),
    };
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().take(checked).map(|t| t.to_vec()).collect();
    let mut worst = 0.0f64;
    for (ti, analytic_t) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; analytic_t.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p.tensors_mut()[ti][k] += delta;
                total_loss(graph, label, &p, phase, seed).unwrap().0.total
            };
            *slot = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        }
        let err = relative_error(analytic_t, &numeric);
        assert!(err <= TOLERANCE, "tensor {ti}: relative error {err:e}\nanalytic {analytic_t:?}\nnumeric {numeric:?}");
        worst = worst.max(err);
    }
    worst
}

#[test]
fn reconstruction_and_kl_gradients() {
    for kl_scale in [KlScale::Unit, KlScale::PerNode] {
        let w = LossWeights { elbo: 1.0, task_specific: 0.0, independent_excitation: 0.0, kl_scale };
        check(w, Phase::Main, &five_node_graph(1, "a"), 0);
    }
}

#[test]
fn task_specific_gradients() {
    let w = LossWeights { elbo: 0.0, task_specific: 1.0, independent_excitation: 0.0, ..LossWeights::default() };
    check(w, Phase::Main, &five_node_graph(2, "b"), 1);
}

#[test]
fn main_phase_gradients() {
    let w = LossWeights { elbo: 0.7, task_specific: 1.3, independent_excitation: 1.0, ..LossWeights::default() };
    for (seed, label) in [(3, 0), (4, 1)] {
        check(w, Phase::Main, &five_node_graph(seed, "x"), label);
    }
}

#[test]
fn adversarial_phase_gradients_reach_encoders_only() {
    let w = LossWeights { elbo: 1.0, task_specific: 1.0, independent_excitation: 0.8, ..LossWeights::default() };
    let graph = five_node_graph(5, "a");
    check(w, Phase::Adversarial, &graph, 0);
    let (_, grads) = total_loss(&graph, 0, &params(w), Phase::Adversarial, 9).unwrap();
    assert!(grads.head_tensors().iter().all(|t| t.iter().all(|&g| g == 0.0)));
    assert!(grads.encoder_tensors().iter().any(|t| t.iter().any(|&g| g != 0.0)));
}

#[test]
fn zero_adversarial_weight_is_inert() {
    let w = LossWeights { elbo: 1.0, task_specific: 1.0, independent_excitation: 0.0, ..LossWeights::default() };
    let (loss, grads) = total_loss(&five_node_graph(6, "a"), 1, &params(w), Phase::Adversarial, 3).unwrap();
    assert_eq!(loss.total, 0.0);
    assert!(grads.tensors().iter().all(|t| t.iter().all(|&g| g == 0.0)));
}

#[test]
fn breakdown_components_sum_to_total() {
    let w = LossWeights { elbo: 0.5, task_specific: 2.0, independent_excitation: 1.5, ..LossWeights::default() };
    let g = five_node_graph(7, "a");
    let (main, _) = total_loss(&g, 0, &params(w), Phase::Main, 1).unwrap();
    let kl_factor = 1.0 / g.nodes() as f64;
    let recomposed = w.elbo * (main.reconstruction + kl_factor * (main.kl_agnostic + main.kl_specific))
        + w.task_specific * (main.demand_mae + main.region_ce);
    assert!((recomposed - main.total).abs() < 1e-6);
    let (adv, _) = total_loss(&g, 0, &params(w), Phase::Adversarial, 1).unwrap();
    assert!((w.independent_excitation * -(adv.cross_demand_mae + adv.cross_region_ce) - adv.total).abs() < 1e-6);
}

#[test]
fn single_autoencoder_gradients() {
    let graph = five_node_graph(8, "a");
    let encoder = params(LossWeights::default()).agnostic;
    for kl_scale in [KlScale::Unit, KlScale::PerNode] {
        let objective = |e: &demandgraph_core::model::Encoder| {
            let (rec, kl, _) = vgae_loss(&graph, e, kl_scale, 21).unwrap();
            rec + kl_scale.factor(graph.nodes()) * kl
        };
        let (_, _, grads) = vgae_loss(&graph, &encoder, kl_scale, 21).unwrap();
        for (ti, analytic) in grads.tensors().iter().enumerate() {
            let numeric: Vec<f64> = (0..analytic.len())
                .map(|k| {
                    let eval = |delta: f64| {
                        let mut e = encoder.clone();
                        e.tensors_mut()[ti][k] += delta;
                        objective(&e)
                    };
                    (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
                })
                .collect();
            let err = relative_error(analytic, &numeric);
            assert!(err <= TOLERANCE, "tensor {ti}: relative error {err:e}");
        }
    }
}
