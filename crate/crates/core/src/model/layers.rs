//! Dense and graph-convolution layers with hand-written backward passes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::{Matrix, SparseMatrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn apply(self, m: &mut Matrix) {
        if self == Activation::Relu {
            for x in m.as_mut_slice() {
                *x = x.max(0.0);
            }
        }
    }

    /// Masks `grad` in place given the layer output.
    fn backprop(self, output: &Matrix, grad: &mut Matrix) {
        if self == Activation::Relu {
            for (g, &o) in grad.as_mut_slice().iter_mut().zip(output.as_slice()) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
}

/// Affine map `x W + b` with `W: [in x out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Matrix::zeros(input, output), bias: vec![0.0; output] }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut Rng) -> Self {
        let limit = math::sqrt(6.0 / (input + output) as f64);
        let weight = Matrix::from_fn(input, output, |_, _| rng.random_range(-limit..limit));
        Self { weight, bias: vec![0.0; output] }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        out.add_row_vector(&self.bias);
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads`; returns `dL/dx`.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix, grads: &mut Linear) -> Result<Matrix> {
        accumulate(grads, x, grad_out)?;
        grad_out.matmul_nt(&self.weight)
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [self.weight.as_slice(), &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.as_mut_slice(), &mut self.bias]
    }
}

fn accumulate(grads: &mut Linear, x: &Matrix, grad_out: &Matrix) -> Result<()> {
    grads.weight.add_assign(&x.matmul_tn(grad_out)?);
    for (b, g) in grads.bias.iter_mut().zip(grad_out.column_sums()) {
        *b += g;
    }
    Ok(())
}

/// `activation(Â · H · W + b)`.
pub fn gcn_layer(h: &Matrix, adjacency: &SparseMatrix, layer: &Linear, activation: Activation) -> Result<Matrix> {
    if adjacency.n() != h.rows() {
        return Err(Error::contract("adjacency size does not match node count"));
    }
    let mut out = adjacency.mul_dense(&h.matmul(&layer.weight)?)?;
    out.add_row_vector(&layer.bias);
    activation.apply(&mut out);
    Ok(out)
}

/// Backward pass of [`gcn_layer`] given its input and output. `Â` must be
/// symmetric. Returns `dL/dH` when `need_input_grad`.
pub fn gcn_layer_backward(
    h: &Matrix,
    output: &Matrix,
    adjacency: &SparseMatrix,
    layer: &Linear,
    activation: Activation,
    grad_out: &Matrix,
    grads: &mut Linear,
    need_input_grad: bool,
) -> Result<Option<Matrix>> {
    let mut g = grad_out.clone();
    activation.backprop(output, &mut g);
    for (b, s) in grads.bias.iter_mut().zip(g.column_sums()) {
        *b += s;
    }
    let ag = adjacency.mul_dense(&g)?;
    grads.weight.add_assign(&h.matmul_tn(&ag)?);
    if need_input_grad {
        Ok(Some(ag.matmul_nt(&layer.weight)?))
    } else {
        Ok(None)
    }
}

/// Two-layer perceptron `out(relu(hidden(x)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

pub struct MlpCache {
    pub input: Matrix,
    pub hidden: Matrix,
    pub output: Matrix,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self { hidden: Linear::glorot(input, hidden, rng), out: Linear::glorot(hidden, output, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: Linear::zeros(self.hidden.input_dim(), self.hidden.output_dim()),
            out: Linear::zeros(self.out.input_dim(), self.out.output_dim()),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<MlpCache> {
        let mut hidden = self.hidden.forward(x)?;
        Activation::Relu.apply(&mut hidden);
        let output = self.out.forward(&hidden)?;
        Ok(MlpCache { input: x.clone(), hidden, output })
    }

    /// `grads` may be `None` when the parameters are frozen.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix, grads: Option<&mut Mlp>) -> Result<Matrix> {
        let mut g_hidden = grad_out.matmul_nt(&self.out.weight)?;
        Activation::Relu.backprop(&cache.hidden, &mut g_hidden);
        if let Some(grads) = grads {
            accumulate(&mut grads.out, &cache.hidden, grad_out)?;
            accumulate(&mut grads.hidden, &cache.input, &g_hidden)?;
        }
        g_hidden.matmul_nt(&self.hidden.weight)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = Vec::with_capacity(4);
        v.extend(self.hidden.tensors());
        v.extend(self.out.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::with_capacity(4);
        v.extend(self.hidden.tensors_mut());
        v.extend(self.out.tensors_mut());
        v
    }
}
