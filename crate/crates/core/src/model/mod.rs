//! Disentangled variational graph autoencoder.
//!
//! Two GCN encoders map node features to a region-agnostic latent `z` and a
//! region-specific latent `z_r`. A parameter-free inner-product decoder
//! reconstructs the graph from `[z | z_r]`, a regressor predicts per-node
//! demand from `z`, and a classifier predicts the region label from the
//! mean-pooled `z_r`.

pub mod layers;
pub mod loss;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::{Matrix, SparseMatrix};
use crate::rng::{self, rng_from};

pub use layers::{gcn_layer, Activation, Linear, Mlp};
pub use loss::{
    kl_diag_gaussian, loss_elbo, loss_elbo_scaled, loss_independent_excitation, loss_task_specific, total_loss, vgae_loss, LossBreakdown,
    Phase,
};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub elbo: f64,
    pub task_specific: f64,
    pub independent_excitation: f64,
    pub kl_scale: KlScale,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { elbo: 1.0, task_specific: 1.0, independent_excitation: 1.0, kl_scale: KlScale::default() }
    }
}

/// Factor applied to the KL terms inside the ELBO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlScale {
    /// KL as computed by `kl_diag_gaussian`, unscaled.
    Unit,
    /// KL divided by the node count, as in the usual VGAE training setup.
    #[default]
    PerNode,
}

impl KlScale {
    pub fn factor(self, nodes: usize) -> f64 {
        match self {
            KlScale::Unit => 1.0,
            KlScale::PerNode => 1.0 / nodes.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub latent_dim: usize,
    pub head_hidden: usize,
    /// Training-region vocabulary; the classifier has one logit per entry.
    pub regions: Vec<String>,
    pub loss_weights: LossWeights,
}

impl ModelConfig {
    pub fn new(input_dim: usize, latent_dim: usize, regions: Vec<String>) -> Self {
        Self { input_dim, hidden1: 64, hidden2: 64, latent_dim, head_hidden: 64, regions, loss_weights: LossWeights::default() }
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn region_index(&self, region_id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r == region_id)
    }
}

/// Three GCN layers: a shared two-layer ReLU trunk and a split third layer
/// producing `mu` and `logvar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layer1: Linear,
    pub layer2: Linear,
    pub mu: Linear,
    pub logvar: Linear,
}

impl Encoder {
    pub fn new(input: usize, hidden1: usize, hidden2: usize, latent: usize, rng: &mut rng::Rng) -> Self {
        Self {
            layer1: Linear::glorot(input, hidden1, rng),
            layer2: Linear::glorot(hidden1, hidden2, rng),
            mu: Linear::glorot(hidden2, latent, rng),
            logvar: Linear::glorot(hidden2, latent, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.input_dim(), l.output_dim());
        Self { layer1: z(&self.layer1), layer2: z(&self.layer2), mu: z(&self.mu), logvar: z(&self.logvar) }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        [&self.layer1, &self.layer2, &self.mu, &self.logvar].into_iter().flat_map(Linear::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { layer1, layer2, mu, logvar } = self;
        [layer1, layer2, mu, logvar].into_iter().flat_map(Linear::tensors_mut).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub agnostic: Encoder,
    pub specific: Encoder,
    /// Demand regressor; softplus is applied to its output.
    pub regressor: Mlp,
    /// Region classifier over mean-pooled latents.
    pub classifier: Mlp,
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.num_regions() < 2 {
            return Err(Error::config("the region classifier needs at least two training regions"));
        }
        if config.input_dim == 0 || config.latent_dim == 0 {
            return Err(Error::config("input and latent dimensions must be positive"));
        }
        let mut rng = rng_from(seed, 0x1417);
        let c = &config;
        let agnostic = Encoder::new(c.input_dim, c.hidden1, c.hidden2, c.latent_dim, &mut rng);
        let specific = Encoder::new(c.input_dim, c.hidden1, c.hidden2, c.latent_dim, &mut rng);
        let regressor = Mlp::new(c.latent_dim, c.head_hidden, 1, &mut rng);
        let classifier = Mlp::new(c.latent_dim, c.head_hidden, c.num_regions(), &mut rng);
        Ok(Self { config, agnostic, specific, regressor, classifier })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            agnostic: self.agnostic.zeros_like(),
            specific: self.specific.zeros_like(),
            regressor: self.regressor.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    /// All parameter tensors: agnostic encoder, specific encoder, regressor, classifier.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.encoder_tensors();
        v.extend(self.regressor.tensors());
        v.extend(self.classifier.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { agnostic, specific, regressor, classifier, .. } = self;
        let mut v = agnostic.tensors_mut();
        v.extend(specific.tensors_mut());
        v.extend(regressor.tensors_mut());
        v.extend(classifier.tensors_mut());
        v
    }

    pub fn encoder_tensors(&self) -> Vec<&[f64]> {
        let mut v = self.agnostic.tensors();
        v.extend(self.specific.tensors());
        v
    }

    pub fn encoder_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { agnostic, specific, .. } = self;
        let mut v = agnostic.tensors_mut();
        v.extend(specific.tensors_mut());
        v
    }

    pub fn head_tensors(&self) -> Vec<&[f64]> {
        let mut v = self.regressor.tensors();
        v.extend(self.classifier.tensors());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Reparameterized draw with a fresh standard-normal stream from this seed.
    Sample(u64),
    /// `z = mu`.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub mu: Matrix,
    pub logvar: Matrix,
    pub z: Matrix,
}

pub(crate) struct EncoderCache {
    h1: Matrix,
    h2: Matrix,
    logvar_raw: Matrix,
    eps: Option<Matrix>,
}

pub fn encode(x: &Matrix, adjacency: &SparseMatrix, params: &Encoder, mode: SampleMode) -> Result<LatentSample> {
    encode_cached(x, adjacency, params, mode).map(|(s, _)| s)
}

pub(crate) fn encode_cached(
    x: &Matrix,
    adjacency: &SparseMatrix,
    params: &Encoder,
    mode: SampleMode,
) -> Result<(LatentSample, EncoderCache)> {
    if x.cols() != params.layer1.input_dim() {
        return Err(Error::contract(alloc::format!(
            "feature width {} does not match encoder input {}",
            x.cols(),
            params.layer1.input_dim()
        )));
    }
    let h1 = gcn_layer(x, adjacency, &params.layer1, Activation::Relu)?;
    let h2 = gcn_layer(&h1, adjacency, &params.layer2, Activation::Relu)?;
    let mu = gcn_layer(&h2, adjacency, &params.mu, Activation::None)?;
    let logvar_raw = gcn_layer(&h2, adjacency, &params.logvar, Activation::None)?;
    if !mu.is_finite() || !logvar_raw.is_finite() {
        return Err(Error::NumericalFailure { component: "encoder".into(), detail: "non-finite latent statistics".into() });
    }
    let logvar = logvar_raw.map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
    let (z, eps) = match mode {
        SampleMode::Deterministic => (mu.clone(), None),
        SampleMode::Sample(seed) => {
            let eps = rng::standard_normal_matrix(&mut rng_from(seed, 0xE95), mu.rows(), mu.cols());
            let mut z = mu.clone();
            for ((zv, &lv), &e) in z.as_mut_slice().iter_mut().zip(logvar.as_slice()).zip(eps.as_slice()) {
                *zv += math::exp(0.5 * lv) * e;
            }
            (z, Some(eps))
        }
    };
    Ok((LatentSample { mu, logvar, z }, EncoderCache { h1, h2, logvar_raw, eps }))
}

/// Backpropagates latent gradients into `grads`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn encoder_backward(
    x: &Matrix,
    adjacency: &SparseMatrix,
    params: &Encoder,
    sample: &LatentSample,
    cache: &EncoderCache,
    grad_z: &Matrix,
    grad_mu_extra: Option<&Matrix>,
    grad_logvar_extra: Option<&Matrix>,
    grads: &mut Encoder,
) -> Result<()> {
    let mut g_mu = grad_z.clone();
    if let Some(extra) = grad_mu_extra {
        g_mu.add_assign(extra);
    }
    let mut g_lv = match grad_logvar_extra {
        Some(extra) => extra.clone(),
        None => Matrix::zeros(g_mu.rows(), g_mu.cols()),
    };
    if let Some(eps) = &cache.eps {
        let lv = sample.logvar.as_slice();
        for (i, g) in g_lv.as_mut_slice().iter_mut().enumerate() {
            *g += grad_z.as_slice()[i] * eps.as_slice()[i] * 0.5 * math::exp(0.5 * lv[i]);
        }
    }
    for (g, &raw) in g_lv.as_mut_slice().iter_mut().zip(cache.logvar_raw.as_slice()) {
        if !(LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
            *g = 0.0;
        }
    }
    let g_h2_mu = layers::gcn_layer_backward(&cache.h2, &sample.mu, adjacency, &params.mu, Activation::None, &g_mu, &mut grads.mu, true)?
        .expect("input grad requested");
    let mut g_h2 = layers::gcn_layer_backward(
        &cache.h2,
        &cache.logvar_raw,
        adjacency,
        &params.logvar,
        Activation::None,
        &g_lv,
        &mut grads.logvar,
        true,
    )?
    .expect("input grad requested");
    g_h2.add_assign(&g_h2_mu);
    let g_h1 = layers::gcn_layer_backward(&cache.h1, &cache.h2, adjacency, &params.layer2, Activation::Relu, &g_h2, &mut grads.layer2, true)?
        .expect("input grad requested");
    layers::gcn_layer_backward(x, &cache.h1, adjacency, &params.layer1, Activation::Relu, &g_h1, &mut grads.layer1, false)?;
    Ok(())
}

/// Edge probabilities `sigmoid([z | z_r] [z | z_r]ᵀ)`.
pub fn decode_adjacency(z: &Matrix, z_r: &Matrix) -> Result<Matrix> {
    let full = z.hconcat(z_r)?;
    Ok(full.matmul_nt(&full)?.map(math::sigmoid))
}

/// Per-node non-negative demand from latents.
pub fn predict_demand(z: &Matrix, regressor: &Mlp) -> Result<Vec<f64>> {
    let out = regressor.forward(z)?.output;
    Ok(out.as_slice().iter().map(|&o| math::softplus(o)).collect())
}

/// Mean-pools node latents into one row.
pub fn mean_pool(z: &Matrix) -> Matrix {
    Matrix::from_vec(1, z.cols(), z.column_means()).expect("row shape")
}

/// Region logits from mean-pooled latents.
pub fn classify_region(z_r: &Matrix, classifier: &Mlp) -> Result<Vec<f64>> {
    if z_r.rows() == 0 {
        return Err(Error::contract("cannot pool an empty graph"));
    }
    Ok(classifier.forward(&mean_pool(z_r))?.output.into_vec())
}

/// Deterministic demand forecast from the region-agnostic path only.
pub fn forecast(params: &ModelParams, x: &Matrix, adjacency: &SparseMatrix) -> Result<Vec<f64>> {
    let sample = encode(x, adjacency, &params.agnostic, SampleMode::Deterministic)?;
    predict_demand(&sample.z, &params.regressor)
}
