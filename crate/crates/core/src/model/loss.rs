//! Training objectives and their gradients.
//!
//! * negative ELBO: class-weighted BCE of the inner-product reconstruction
//!   of the binary adjacency plus the KL terms of both latents;
//! * task-specific loss: demand MAE from `z` plus region cross-entropy
//!   from `z_r`;
//! * independent-excitation loss: the negated task loss with the heads
//!   cross-wired (regressor fed `z_r`, classifier fed `z`).

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{encode_cached, encoder_backward, mean_pool, Encoder, KlScale, LatentSample, ModelParams, SampleMode};
use crate::error::{Error, Result};
use crate::graph::RegionGraph;
use crate::math;
use crate::matrix::{Matrix, SparseMatrix};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Negative ELBO + task loss; updates encoders and heads.
    Main,
    /// Independent-excitation loss; heads are held constant.
    Adversarial,
}

/// `-0.5 * sum(1 + logvar - mu^2 - exp(logvar))` over latent dims, averaged
/// over nodes.
pub fn kl_diag_gaussian(mu: &Matrix, logvar: &Matrix) -> f64 {
    let total: f64 = mu
        .as_slice()
        .iter()
        .zip(logvar.as_slice())
        .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - math::exp(lv)))
        .sum();
    total / mu.rows().max(1) as f64
}

fn kl_gradients(mu: &Matrix, logvar: &Matrix, scale: f64) -> (Matrix, Matrix) {
    let s = scale / mu.rows().max(1) as f64;
    (mu.map(|m| s * m), logvar.map(|lv| s * 0.5 * (math::exp(lv) - 1.0)))
}

/// Non-zero pattern of `adjacency` as a dense 0/1 matrix with self-loops.
pub fn binary_adjacency(adjacency: &SparseMatrix) -> Matrix {
    let n = adjacency.n();
    let mut out = Matrix::identity(n);
    for (i, j, v) in adjacency.triplets() {
        if v != 0.0 {
            out[(i, j)] = 1.0;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Reconstruction {
    pub loss: f64,
    pub pos_weight: f64,
    /// Set when the graph had no edges or no non-edges.
    pub fallback: bool,
}

/// Weighted-mean BCE between `sigmoid(F Fᵀ)` and `target`. Positives are
/// weighted by `#non-edges / #edges`. Returns the gradient w.r.t. `F`.
pub(crate) fn reconstruction(full: &Matrix, target: &Matrix, need_grad: bool) -> Result<(Reconstruction, Option<Matrix>)> {
    let n = full.rows();
    if target.shape() != (n, n) {
        return Err(Error::contract("adjacency target does not match latent node count"));
    }
    let edges = target.as_slice().iter().filter(|&&a| a != 0.0).count();
    let cells = n * n;
    let (pos_weight, fallback) = if edges == 0 || edges == cells {
        (1.0, true)
    } else {
        ((cells - edges) as f64 / edges as f64, false)
    };
    let total_weight = pos_weight * edges as f64 + (cells - edges) as f64;
    let logits = full.matmul_nt(full)?;
    let mut loss = 0.0;
    let mut grad_logits = if need_grad { Some(Matrix::zeros(n, n)) } else { None };
    for idx in 0..cells {
        let s = logits.as_slice()[idx];
        let positive = target.as_slice()[idx] != 0.0;
        let (w, l) = if positive { (pos_weight, -math::log_sigmoid(s)) } else { (1.0, -math::log_sigmoid(-s)) };
        loss += w * l;
        if let Some(g) = grad_logits.as_mut() {
            g.as_mut_slice()[idx] = w * (math::sigmoid(s) - f64::from(u8::from(positive))) / total_weight;
        }
    }
    let grad_full = match grad_logits {
        // logits = F Fᵀ, so dF = (G + Gᵀ) F and G is symmetric here
        Some(mut g) => {
            g.scale(2.0);
            Some(g.matmul(full)?)
        }
        None => None,
    };
    Ok((Reconstruction { loss: loss / total_weight, pos_weight, fallback }, grad_full))
}

/// Negative ELBO as a loss to minimize.
pub fn loss_elbo(agnostic: &LatentSample, specific: &LatentSample, adjacency_binary: &Matrix) -> Result<f64> {
    loss_elbo_scaled(agnostic, specific, adjacency_binary, KlScale::Unit)
}

/// Negative ELBO with the KL terms scaled per `kl_scale`.
pub fn loss_elbo_scaled(
    agnostic: &LatentSample,
    specific: &LatentSample,
    adjacency_binary: &Matrix,
    kl_scale: KlScale,
) -> Result<f64> {
    let full = agnostic.z.hconcat(&specific.z)?;
    let (rec, _) = reconstruction(&full, adjacency_binary, false)?;
    let kl = kl_diag_gaussian(&agnostic.mu, &agnostic.logvar) + kl_diag_gaussian(&specific.mu, &specific.logvar);
    Ok(rec.loss + kl_scale.factor(full.rows()) * kl)
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len().max(1) as f64
}

fn mae_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(p, y)| {
            let d = p - y;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Categorical cross-entropy of class `label` under `logits`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    math::log_sum_exp(logits) - logits[label]
}

fn cross_entropy_grad(logits: &[f64], label: usize) -> Vec<f64> {
    let lse = math::log_sum_exp(logits);
    logits
        .iter()
        .enumerate()
        .map(|(i, &l)| math::exp(l - lse) - if i == label { 1.0 } else { 0.0 })
        .collect()
}

pub fn loss_task_specific(pred: &[f64], target: &[f64], logits: &[f64], label: usize) -> f64 {
    mae(pred, target) + cross_entropy(logits, label)
}

/// The task loss evaluated on cross-wired head outputs, negated.
pub fn loss_independent_excitation(pred_from_specific: &[f64], target: &[f64], logits_from_agnostic: &[f64], label: usize) -> f64 {
    -loss_task_specific(pred_from_specific, target, logits_from_agnostic, label)
}

/// Every component of one loss evaluation. Components of the phase that was
/// not run are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl_agnostic: f64,
    pub kl_specific: f64,
    pub elbo: f64,
    pub demand_mae: f64,
    pub region_ce: f64,
    pub task_specific: f64,
    pub cross_demand_mae: f64,
    pub cross_region_ce: f64,
    pub independent_excitation: f64,
    pub total: f64,
    pub pos_weight: f64,
    pub pos_weight_fallback: bool,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.reconstruction, self.kl_agnostic, self.kl_specific, self.demand_mae, self.region_ce, self.cross_demand_mae, self.cross_region_ce, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Running sum helper for batch means.
    pub fn accumulate(&mut self, other: &LossBreakdown, scale: f64) {
        self.reconstruction += scale * other.reconstruction;
        self.kl_agnostic += scale * other.kl_agnostic;
        self.kl_specific += scale * other.kl_specific;
        self.elbo += scale * other.elbo;
        self.demand_mae += scale * other.demand_mae;
        self.region_ce += scale * other.region_ce;
        self.task_specific += scale * other.task_specific;
        self.cross_demand_mae += scale * other.cross_demand_mae;
        self.cross_region_ce += scale * other.cross_region_ce;
        self.independent_excitation += scale * other.independent_excitation;
        self.total += scale * other.total;
        self.pos_weight += scale * other.pos_weight;
        self.pos_weight_fallback |= other.pos_weight_fallback;
    }
}

fn column(values: Vec<f64>) -> Matrix {
    let n = values.len();
    Matrix::from_vec(n, 1, values).expect("column shape")
}

/// Broadcasts a pooled-row gradient back to every node.
fn unpool(grad_pooled: &Matrix, nodes: usize) -> Matrix {
    let inv = 1.0 / nodes as f64;
    Matrix::from_fn(nodes, grad_pooled.cols(), |_, j| grad_pooled[(0, j)] * inv)
}

/// Loss and parameter gradients of one graph.
///
/// In the adversarial phase the returned head gradients are zero.
pub fn total_loss(graph: &RegionGraph, label: usize, params: &ModelParams, phase: Phase, seed: u64) -> Result<(LossBreakdown, ModelParams)> {
    let cfg = &params.config;
    if label >= cfg.num_regions() {
        return Err(Error::contract("region label outside the classifier vocabulary"));
    }
    if graph.targets.len() != graph.nodes() {
        return Err(Error::contract("target length does not match node count"));
    }
    let w = cfg.loss_weights;
    let mut grads = params.zeros_like();
    let mut out = LossBreakdown::default();
    let x = &graph.node_features;
    let adj = graph.adjacency();
    let nodes = graph.nodes();

    if phase == Phase::Adversarial && w.independent_excitation == 0.0 {
        return Ok((out, grads));
    }

    let stream = match phase {
        Phase::Main => 1,
        Phase::Adversarial => 3,
    };
    let (agn, agn_cache) = encode_cached(x, adj, &params.agnostic, SampleMode::Sample(derive_seed(seed, stream)))?;
    let (spc, spc_cache) = encode_cached(x, adj, &params.specific, SampleMode::Sample(derive_seed(seed, stream + 1)))?;

    let (grad_z, grad_zr, kl_grads) = match phase {
        Phase::Main => {
            let full = agn.z.hconcat(&spc.z)?;
            let (rec, grad_full) = reconstruction(&full, &binary_adjacency(adj), true)?;
            let mut grad_full = grad_full.expect("gradient requested");
            grad_full.scale(w.elbo);
            let (mut grad_z, mut grad_zr) = grad_full.hsplit(cfg.latent_dim);

            out.reconstruction = rec.loss;
            out.pos_weight = rec.pos_weight;
            out.pos_weight_fallback = rec.fallback;
            out.kl_agnostic = kl_diag_gaussian(&agn.mu, &agn.logvar);
            out.kl_specific = kl_diag_gaussian(&spc.mu, &spc.logvar);
            let kl_factor = w.kl_scale.factor(nodes);
            out.elbo = out.reconstruction + kl_factor * (out.kl_agnostic + out.kl_specific);

            let reg = params.regressor.forward(&agn.z)?;
            let pred: Vec<f64> = reg.output.as_slice().iter().map(|&o| math::softplus(o)).collect();
            out.demand_mae = mae(&pred, &graph.targets);
            let grad_out: Vec<f64> = mae_grad(&pred, &graph.targets)
                .into_iter()
                .zip(reg.output.as_slice())
                .map(|(g, &o)| w.task_specific * g * math::sigmoid(o))
                .collect();
            grad_z.add_assign(&params.regressor.backward(&reg, &column(grad_out), Some(&mut grads.regressor))?);

            let cls = params.classifier.forward(&mean_pool(&spc.z))?;
            let logits = cls.output.as_slice();
            out.region_ce = cross_entropy(logits, label);
            let g_logits: Vec<f64> = cross_entropy_grad(logits, label).into_iter().map(|g| w.task_specific * g).collect();
            let g_logits = Matrix::from_vec(1, g_logits.len(), g_logits)?;
            let g_pooled = params.classifier.backward(&cls, &g_logits, Some(&mut grads.classifier))?;
            grad_zr.add_assign(&unpool(&g_pooled, nodes));

            out.task_specific = out.demand_mae + out.region_ce;
            out.total = w.elbo * out.elbo + w.task_specific * out.task_specific;
            let kl_a = kl_gradients(&agn.mu, &agn.logvar, w.elbo * kl_factor);
            let kl_s = kl_gradients(&spc.mu, &spc.logvar, w.elbo * kl_factor);
            (grad_z, grad_zr, Some((kl_a, kl_s)))
        }
        Phase::Adversarial => {
            let scale = -w.independent_excitation;
            let reg = params.regressor.forward(&spc.z)?;
            let pred: Vec<f64> = reg.output.as_slice().iter().map(|&o| math::softplus(o)).collect();
            out.cross_demand_mae = mae(&pred, &graph.targets);
            let grad_out: Vec<f64> = mae_grad(&pred, &graph.targets)
                .into_iter()
                .zip(reg.output.as_slice())
                .map(|(g, &o)| scale * g * math::sigmoid(o))
                .collect();
            let grad_zr = params.regressor.backward(&reg, &column(grad_out), None)?;

            let cls = params.classifier.forward(&mean_pool(&agn.z))?;
            let logits = cls.output.as_slice();
            out.cross_region_ce = cross_entropy(logits, label);
            let g_logits: Vec<f64> = cross_entropy_grad(logits, label).into_iter().map(|g| scale * g).collect();
            let g_logits = Matrix::from_vec(1, g_logits.len(), g_logits)?;
            let grad_z = unpool(&params.classifier.backward(&cls, &g_logits, None)?, nodes);

            out.independent_excitation = -(out.cross_demand_mae + out.cross_region_ce);
            out.total = w.independent_excitation * out.independent_excitation;
            (grad_z, grad_zr, None)
        }
    };

    if !out.is_finite() {
        return Err(Error::NumericalFailure {
            component: "total_loss".into(),
            detail: alloc::format!("{out:?}"),
        });
    }

    let (kl_a, kl_s) = match kl_grads {
        Some((a, s)) => (Some(a), Some(s)),
        None => (None, None),
    };
    encoder_backward(
        x,
        adj,
        &params.agnostic,
        &agn,
        &agn_cache,
        &grad_z,
        kl_a.as_ref().map(|g| &g.0),
        kl_a.as_ref().map(|g| &g.1),
        &mut grads.agnostic,
    )?;
    encoder_backward(
        x,
        adj,
        &params.specific,
        &spc,
        &spc_cache,
        &grad_zr,
        kl_s.as_ref().map(|g| &g.0),
        kl_s.as_ref().map(|g| &g.1),
        &mut grads.specific,
    )?;
    Ok((out, grads))
}

/// Reconstruction and KL of a single variational graph autoencoder with its
/// encoder gradient. Returns `(reconstruction, kl, grads)`.
pub fn vgae_loss(graph: &RegionGraph, encoder: &Encoder, kl_scale: KlScale, seed: u64) -> Result<(f64, f64, Encoder)> {
    let x = &graph.node_features;
    let adj = graph.adjacency();
    let (sample, cache) = encode_cached(x, adj, encoder, SampleMode::Sample(derive_seed(seed, 1)))?;
    let (rec, grad_z) = reconstruction(&sample.z, &binary_adjacency(adj), true)?;
    let kl = kl_diag_gaussian(&sample.mu, &sample.logvar);
    if !(rec.loss.is_finite() && kl.is_finite()) {
        return Err(Error::NumericalFailure { component: "vgae_loss".into(), detail: alloc::format!("{rec:?} kl={kl}") });
    }
    let (g_mu, g_lv) = kl_gradients(&sample.mu, &sample.logvar, kl_scale.factor(graph.nodes()));
    let mut grads = encoder.zeros_like();
    let grad_z = grad_z.expect("gradient requested");
    encoder_backward(x, adj, encoder, &sample, &cache, &grad_z, Some(&g_mu), Some(&g_lv), &mut grads)?;
    Ok((rec.loss, kl, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn kl_closed_forms() {
        let z = Matrix::zeros(3, 2);
        assert_eq!(kl_diag_gaussian(&z, &z), 0.0);
        let mu = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let lv = Matrix::zeros(1, 1);
        assert!((kl_diag_gaussian(&mu, &lv) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_latents_give_ln2_reconstruction() {
        let z = Matrix::zeros(4, 2);
        let sample = LatentSample { mu: z.clone(), logvar: z.clone(), z: z.clone() };
        let mut target = Matrix::identity(4);
        target[(0, 1)] = 1.0;
        target[(1, 0)] = 1.0;
        let loss = loss_elbo(&sample, &sample, &target).unwrap();
        assert!((loss - math::LN_2).abs() < 1e-12);
    }

    #[test]
    fn full_graph_falls_back_to_unit_weight() {
        let full = Matrix::zeros(2, 1);
        let target = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (rec, _) = reconstruction(&full, &target, false).unwrap();
        assert!(rec.fallback);
        assert_eq!(rec.pos_weight, 1.0);
    }

    #[test]
    fn near_perfect_reconstruction_vanishes() {
        // two disconnected nodes with orthogonal large latents
        let big = 30.0;
        let full = Matrix::from_rows(&[vec![big, 0.0], vec![0.0, big]]).unwrap();
        let (rec, _) = reconstruction(&full, &Matrix::identity(2), false).unwrap();
        // off-diagonal logits are 0, so only the diagonal can be perfect
        assert!(rec.loss > 0.0);
        let z = Matrix::zeros(2, 1);
        let full = Matrix::from_rows(&[vec![big, -big], vec![-big, big]]).unwrap();
        let (rec, _) = reconstruction(&full, &Matrix::identity(2), false).unwrap();
        assert!(rec.loss < 1e-12);
        assert_eq!(kl_diag_gaussian(&z, &z), 0.0);
    }

    #[test]
    fn task_loss_hand_value() {
        let y = [1.0, 2.0, 0.0];
        let pred: Vec<f64> = y.iter().map(|v| v + 2.0).collect();
        let logits = [0.0, 0.0, 0.0];
        let expected = 2.0 + math::ln(3.0);
        assert!((loss_task_specific(&pred, &y, &logits, 1) - expected).abs() < 1e-12);
        assert!((loss_independent_excitation(&pred, &y, &logits, 1) + expected).abs() < 1e-12);
        assert!((expected - 3.0986).abs() < 1e-4);
    }

    #[test]
    fn perfect_task_predictions_approach_zero() {
        let y = [3.0, 4.0];
        let logits = [100.0, 0.0, 0.0];
        assert!(loss_task_specific(&y, &y, &logits, 0) < 1e-40);
    }
}
