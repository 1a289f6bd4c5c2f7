//! Comparison models trained on the same splits as the disentangled model.
//!
//! `gcn_direct` regresses demand with a plain GCN, `node_embedding_mlp` uses
//! per-region random-walk skip-gram embeddings next to the node features and
//! `graph_ae` freezes the latent of a single variational graph autoencoder
//! before fitting a regressor on it.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::eval::{evaluate_with, MetricsReport};
use crate::graph::RegionGraph;
use crate::math;
use crate::matrix::{Matrix, SparseMatrix};
use crate::model::layers::gcn_layer_backward;
use crate::model::{encode, gcn_layer, vgae_loss, Activation, Encoder, Linear, Mlp, SampleMode};
use crate::optim::Adam;
use crate::rng::{derive_seed, rng_from, Rng};
use crate::train::ExperimentConfig;

pub const BASELINE_NAMES: [&str; 3] = ["gcn_direct", "node_embedding_mlp", "graph_ae"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    GcnDirect,
    NodeEmbeddingMlp,
    GraphAe,
}

impl Baseline {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gcn_direct" => Ok(Self::GcnDirect),
            "node_embedding_mlp" => Ok(Self::NodeEmbeddingMlp),
            "graph_ae" => Ok(Self::GraphAe),
            other => Err(Error::UnknownBaseline(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::GcnDirect => "gcn_direct",
            Self::NodeEmbeddingMlp => "node_embedding_mlp",
            Self::GraphAe => "graph_ae",
        }
    }
}

/// MAE of `softplus(output)` against `targets` and its gradient w.r.t. `output`.
fn softplus_mae(output: &Matrix, targets: &[f64]) -> (f64, Matrix) {
    let n = targets.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = Matrix::from_fn(output.rows(), 1, |i, _| {
        let o = output[(i, 0)];
        let d = math::softplus(o) - targets[i];
        loss += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        sign * math::sigmoid(o) / n
    });
    (loss / n, grad)
}

fn softplus_column(output: &Matrix) -> Vec<f64> {
    output.as_slice().iter().map(|&o| math::softplus(o)).collect()
}

/// Shuffled mini-batch Adam over `samples` items; `loss_grad` returns the
/// loss of one item and gradients in `tensors` order. Returns per-epoch mean loss.
fn fit<P, T, L>(params: &mut P, samples: usize, config: &ExperimentConfig, stream: u64, tensors: T, mut loss_grad: L) -> Result<Vec<f64>>
where
    T: Fn(&mut P) -> Vec<&mut [f64]>,
    L: FnMut(&P, usize, u64) -> Result<(f64, Vec<Vec<f64>>)>,
{
    if samples == 0 {
        return Err(Error::config("no training samples"));
    }
    let mut adam = {
        let views = tensors(params);
        let shared: Vec<&[f64]> = views.iter().map(|t| &**t).collect();
        Adam::new(config.learning_rate, &shared)
    };
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut step = 0u64;
    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..samples).collect();
        order.shuffle(&mut rng_from(config.seed, derive_seed(stream, epoch as u64)));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut sum: Option<Vec<Vec<f64>>> = None;
            let scale = 1.0 / batch.len() as f64;
            for (pos, &i) in batch.iter().enumerate() {
                let (loss, grads) = loss_grad(params, i, derive_seed(config.seed ^ stream, (step << 16) ^ pos as u64))?;
                if !loss.is_finite() {
                    return Err(Error::NumericalFailure { component: "baseline".into(), detail: alloc::format!("epoch {epoch}") });
                }
                epoch_loss += loss / samples as f64;
                match sum.as_mut() {
                    None => sum = Some(grads.into_iter().map(|g| g.into_iter().map(|v| v * scale).collect()).collect()),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grads) {
                            for (x, v) in a.iter_mut().zip(g) {
                                *x += v * scale;
                            }
                        }
                    }
                }
            }
            let grads = sum.expect("non-empty batch");
            adam.step(tensors(params), grads.iter().map(Vec::as_slice).collect());
            step += 1;
        }
        history.push(epoch_loss);
    }
    Ok(history)
}

fn flatten(tensors: Vec<&[f64]>) -> Vec<Vec<f64>> {
    tensors.into_iter().map(<[f64]>::to_vec).collect()
}

/// Three ReLU GCN layers followed by an MLP regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnRegressor {
    pub layers: [Linear; 3],
    pub head: Mlp,
}

impl GcnRegressor {
    pub fn new(input: usize, config: &ExperimentConfig, rng: &mut Rng) -> Self {
        Self {
            layers: [
                Linear::glorot(input, config.hidden_dim, rng),
                Linear::glorot(config.hidden_dim, config.hidden_dim, rng),
                Linear::glorot(config.hidden_dim, config.latent_dim, rng),
            ],
            head: Mlp::new(config.latent_dim, config.head_hidden_dim, 1, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Self { layers: self.layers.clone().map(|l| Linear::zeros(l.input_dim(), l.output_dim())), head: self.head.zeros_like() }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.extend(self.head.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        out.extend(self.head.tensors_mut());
        out
    }

    fn hidden(&self, x: &Matrix, adj: &SparseMatrix) -> Result<[Matrix; 3]> {
        let h1 = gcn_layer(x, adj, &self.layers[0], Activation::Relu)?;
        let h2 = gcn_layer(&h1, adj, &self.layers[1], Activation::Relu)?;
        let h3 = gcn_layer(&h2, adj, &self.layers[2], Activation::Relu)?;
        Ok([h1, h2, h3])
    }

    pub fn predict(&self, x: &Matrix, adj: &SparseMatrix) -> Result<Vec<f64>> {
        let [_, _, h3] = self.hidden(x, adj)?;
        Ok(softplus_column(&self.head.forward(&h3)?.output))
    }

    /// MAE and gradients on one graph.
    pub fn loss_grad(&self, graph: &RegionGraph) -> Result<(f64, Self)> {
        let (x, adj) = (&graph.node_features, graph.adjacency());
        let [h1, h2, h3] = self.hidden(x, adj)?;
        let cache = self.head.forward(&h3)?;
        let (loss, g_out) = softplus_mae(&cache.output, &graph.targets);
        let mut grads = self.zeros_like();
        let g3 = self.head.backward(&cache, &g_out, Some(&mut grads.head))?;
        let [gl1, gl2, gl3] = &mut grads.layers;
        let g2 = gcn_layer_backward(&h2, &h3, adj, &self.layers[2], Activation::Relu, &g3, gl3, true)?.expect("input grad");
        let g1 = gcn_layer_backward(&h1, &h2, adj, &self.layers[1], Activation::Relu, &g2, gl2, true)?.expect("input grad");
        gcn_layer_backward(x, &h1, adj, &self.layers[0], Activation::Relu, &g1, gl1, false)?;
        Ok((loss, grads))
    }
}

fn training_samples(train: &BTreeMap<String, Vec<RegionGraph>>) -> Vec<&RegionGraph> {
    train.values().flatten().collect()
}

fn input_width(train: &BTreeMap<String, Vec<RegionGraph>>, test: &[RegionGraph]) -> Result<usize> {
    let first = train.values().flatten().next().ok_or_else(|| Error::config("no training samples"))?;
    let width = first.node_features.cols();
    if train.values().flatten().chain(test).any(|g| g.node_features.cols() != width) {
        return Err(Error::contract("snapshots have inconsistent feature widths"));
    }
    Ok(width)
}

pub fn train_gcn_direct(train: &BTreeMap<String, Vec<RegionGraph>>, config: &ExperimentConfig) -> Result<GcnRegressor> {
    let samples = training_samples(train);
    let width = input_width(train, &[])?;
    let mut model = GcnRegressor::new(width, config, &mut rng_from(config.seed, 0xB1));
    fit(&mut model, samples.len(), config, 0xB1, GcnRegressor::tensors_mut, |m, i, _| {
        let (loss, g) = m.loss_grad(samples[i])?;
        Ok((loss, flatten(g.tensors())))
    })?;
    Ok(model)
}

/// Skip-gram settings for the node-embedding baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { dim: 16, walks_per_node: 10, walk_length: 20, window: 4, negatives: 5, epochs: 2, learning_rate: 0.025 }
    }
}

/// Random walks with transition probability proportional to edge weight;
/// self-loops are skipped.
pub fn random_walks(adjacency: &SparseMatrix, config: &EmbeddingConfig, rng: &mut Rng) -> Vec<Vec<usize>> {
    let n = adjacency.n();
    let neighbors: Vec<Vec<(usize, f64)>> =
        (0..n).map(|i| adjacency.row(i).filter(|&(j, w)| j != i && w > 0.0).collect()).collect();
    let mut walks = Vec::with_capacity(n * config.walks_per_node);
    for _ in 0..config.walks_per_node {
        for start in 0..n {
            let mut walk = Vec::with_capacity(config.walk_length);
            walk.push(start);
            while walk.len() < config.walk_length {
                let here = &neighbors[*walk.last().expect("non-empty walk")];
                if here.is_empty() {
                    break;
                }
                let total: f64 = here.iter().map(|(_, w)| w).sum();
                let mut pick = rng.random_range(0.0..total);
                let mut next = here[here.len() - 1].0;
                for &(j, w) in here {
                    if pick < w {
                        next = j;
                        break;
                    }
                    pick -= w;
                }
                walk.push(next);
            }
            walks.push(walk);
        }
    }
    walks
}

/// Skip-gram with negative sampling over random walks; returns `[n × dim]`.
pub fn node_embeddings(adjacency: &SparseMatrix, config: &EmbeddingConfig, seed: u64) -> Matrix {
    let n = adjacency.n();
    let mut rng = rng_from(seed, 0xE3B);
    let walks = random_walks(adjacency, config, &mut rng);
    let bound = 0.5 / config.dim as f64;
    let mut input = Matrix::from_fn(n, config.dim, |_, _| rng.random_range(-bound..bound));
    let mut output = Matrix::zeros(n, config.dim);
    let total_steps = (config.epochs * walks.len()).max(1) as f64;
    let mut done = 0.0;
    let mut grad_in = alloc::vec![0.0; config.dim];
    for _ in 0..config.epochs {
        for walk in &walks {
            let lr = config.learning_rate * (1.0 - done / total_steps).max(1e-4);
            done += 1.0;
            for (pos, &center) in walk.iter().enumerate() {
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(walk.len());
                for (ctx_pos, &context) in walk.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 { (context, 1.0) } else { (rng.random_range(0..n), 0.0) };
                        let score: f64 = input.row(center).iter().zip(output.row(target)).map(|(a, b)| a * b).sum();
                        let g = lr * (label - math::sigmoid(score));
                        for d in 0..config.dim {
                            grad_in[d] += g * output[(target, d)];
                            output[(target, d)] += g * input[(center, d)];
                        }
                    }
                    for (v, g) in input.row_mut(center).iter_mut().zip(&grad_in) {
                        *v += g;
                    }
                }
            }
        }
    }
    input
}

/// Per-region embeddings next to node features, regressed by an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRegressor {
    pub embedding: EmbeddingConfig,
    pub head: Mlp,
}

impl EmbeddingRegressor {
    pub fn inputs(graph: &RegionGraph, embeddings: &Matrix) -> Result<Matrix> {
        Ok(embeddings.hconcat(&graph.node_features)?)
    }

    pub fn predict(&self, graph: &RegionGraph, embeddings: &Matrix) -> Result<Vec<f64>> {
        Ok(softplus_column(&self.head.forward(&Self::inputs(graph, embeddings)?)?.output))
    }
}

/// Embeddings for every region appearing in `graphs`, keyed by region id.
pub fn region_embeddings<'a, I>(graphs: I, config: &EmbeddingConfig, seed: u64) -> BTreeMap<String, Matrix>
where
    I: IntoIterator<Item = &'a RegionGraph>,
{
    let mut out = BTreeMap::new();
    for g in graphs {
        if !out.contains_key(&g.region_id) {
            let region_seed = derive_seed(seed, crate::rng::name_stream(&g.region_id));
            out.insert(g.region_id.clone(), node_embeddings(g.adjacency(), config, region_seed));
        }
    }
    out
}

pub fn train_node_embedding_mlp(
    train: &BTreeMap<String, Vec<RegionGraph>>,
    embeddings: &BTreeMap<String, Matrix>,
    config: &ExperimentConfig,
) -> Result<EmbeddingRegressor> {
    let samples = training_samples(train);
    let width = input_width(train, &[])?;
    let embedding = EmbeddingConfig::default();
    let mut rng = rng_from(config.seed, 0xB2);
    let mut model = EmbeddingRegressor { embedding, head: Mlp::new(width + embedding.dim, config.head_hidden_dim, 1, &mut rng) };
    let inputs = samples
        .iter()
        .map(|g| {
            let emb = embeddings.get(&g.region_id).ok_or_else(|| Error::contract("missing region embedding"))?;
            EmbeddingRegressor::inputs(g, emb)
        })
        .collect::<Result<Vec<_>>>()?;
    fit(&mut model, samples.len(), config, 0xB2, |m| m.head.tensors_mut(), |m, i, _| {
        let cache = m.head.forward(&inputs[i])?;
        let (loss, g_out) = softplus_mae(&cache.output, &samples[i].targets);
        let mut grads = m.head.zeros_like();
        m.head.backward(&cache, &g_out, Some(&mut grads))?;
        Ok((loss, flatten(grads.tensors())))
    })?;
    Ok(model)
}

/// Single variational graph autoencoder with a regressor on its frozen mean latent.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderRegressor {
    pub encoder: Encoder,
    pub head: Mlp,
}

impl AutoencoderRegressor {
    pub fn latent(&self, graph: &RegionGraph) -> Result<Matrix> {
        Ok(encode(&graph.node_features, graph.adjacency(), &self.encoder, SampleMode::Deterministic)?.mu)
    }

    pub fn predict(&self, graph: &RegionGraph) -> Result<Vec<f64>> {
        Ok(softplus_column(&self.head.forward(&self.latent(graph)?)?.output))
    }
}

pub fn train_graph_ae(train: &BTreeMap<String, Vec<RegionGraph>>, config: &ExperimentConfig) -> Result<AutoencoderRegressor> {
    let samples = training_samples(train);
    let width = input_width(train, &[])?;
    let mut rng = rng_from(config.seed, 0xB3);
    let mut encoder = Encoder::new(width, config.hidden_dim, config.hidden_dim, config.latent_dim, &mut rng);
    let kl_scale = config.loss_weights.kl_scale;
    fit(&mut encoder, samples.len(), config, 0xB3, Encoder::tensors_mut, |e, i, seed| {
        let (rec, kl, grads) = vgae_loss(samples[i], e, kl_scale, seed)?;
        Ok((rec + kl_scale.factor(samples[i].nodes()) * kl, flatten(grads.tensors())))
    })?;
    let mut model = AutoencoderRegressor { encoder, head: Mlp::new(config.latent_dim, config.head_hidden_dim, 1, &mut rng) };
    let latents = samples.iter().map(|g| model.latent(g)).collect::<Result<Vec<_>>>()?;
    fit(&mut model, samples.len(), config, 0xB4, |m| m.head.tensors_mut(), |m, i, _| {
        let cache = m.head.forward(&latents[i])?;
        let (loss, g_out) = softplus_mae(&cache.output, &samples[i].targets);
        let mut grads = m.head.zeros_like();
        m.head.backward(&cache, &g_out, Some(&mut grads))?;
        Ok((loss, flatten(grads.tensors())))
    })?;
    Ok(model)
}

/// Trains baseline `name` on `train` and evaluates it on `test`.
pub fn run_baseline(
    name: &str,
    train: &BTreeMap<String, Vec<RegionGraph>>,
    test: &[RegionGraph],
    config: &ExperimentConfig,
) -> Result<MetricsReport> {
    let baseline = Baseline::parse(name)?;
    config.validate()?;
    input_width(train, test)?;
    let mut report = MetricsReport::new(baseline.name(), train.keys().cloned().collect());
    report.seed = config.seed;
    report.regions = match baseline {
        Baseline::GcnDirect => {
            let model = train_gcn_direct(train, config)?;
            evaluate_with(test, |g| model.predict(&g.node_features, g.adjacency()))?
        }
        Baseline::NodeEmbeddingMlp => {
            let embeddings = region_embeddings(train.values().flatten().chain(test), &EmbeddingConfig::default(), config.seed);
            let model = train_node_embedding_mlp(train, &embeddings, config)?;
            evaluate_with(test, |g| model.predict(g, &embeddings[&g.region_id]))?
        }
        Baseline::GraphAe => {
            let model = train_graph_ae(train, config)?;
            evaluate_with(test, |g| model.predict(g))?
        }
    };
    for region in report.regions.keys() {
        if train.contains_key(region) {
            report.warnings.push(alloc::format!("region `{region}` was part of training"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 0.5));
            t.push((i, (i + 1) % n, 0.25));
            t.push(((i + 1) % n, i, 0.25));
        }
        SparseMatrix::from_triplets(n, &t).unwrap()
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert_eq!(Baseline::parse("lstm"), Err(Error::UnknownBaseline("lstm".into())));
        for name in BASELINE_NAMES {
            assert_eq!(Baseline::parse(name).unwrap().name(), name);
        }
    }

    #[test]
    fn walks_follow_edges() {
        let adj = ring(6);
        let walks = random_walks(&adj, &EmbeddingConfig::default(), &mut rng_from(1, 0));
        assert_eq!(walks.len(), 60);
        for w in &walks {
            assert_eq!(w.len(), 20);
            for pair in w.windows(2) {
                assert!((pair[0] + 1) % 6 == pair[1] || (pair[1] + 1) % 6 == pair[0]);
            }
        }
    }

    #[test]
    fn embeddings_place_ring_neighbors_closer_than_opposites() {
        let adj = ring(12);
        let config = EmbeddingConfig { epochs: 5, ..EmbeddingConfig::default() };
        let e = node_embeddings(&adj, &config, 3);
        let cos = |a: usize, b: usize| {
            let (x, y) = (e.row(a), e.row(b));
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            dot / (nx * ny)
        };
        let near: f64 = (0..12).map(|i| cos(i, (i + 1) % 12)).sum::<f64>() / 12.0;
        let far: f64 = (0..12).map(|i| cos(i, (i + 6) % 12)).sum::<f64>() / 12.0;
        assert!(near > far, "near {near} far {far}");
    }

    #[test]
    fn embeddings_are_deterministic() {
        let adj = ring(8);
        let c = EmbeddingConfig::default();
        assert_eq!(node_embeddings(&adj, &c, 9), node_embeddings(&adj, &c, 9));
    }

    #[test]
    fn softplus_mae_gradient_matches_differences() {
        let out = Matrix::from_vec(3, 1, alloc::vec![0.3, -1.2, 2.0]).unwrap();
        let y = [1.0, 0.0, 0.5];
        let (_, g) = softplus_mae(&out, &y);
        for i in 0..3 {
            let mut p = out.clone();
            p[(i, 0)] += 1e-6;
            let mut m = out.clone();
            m[(i, 0)] -= 1e-6;
            let fd = (softplus_mae(&p, &y).0 - softplus_mae(&m, &y).0) / 2e-6;
            assert!((fd - g[(i, 0)]).abs() < 1e-6);
        }
    }
}
