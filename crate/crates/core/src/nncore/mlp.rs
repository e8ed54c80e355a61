use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::parallel;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// `y = act(x·W + b)` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    /// Row-wise l2 normalization.
    L2Normalize,
}

/// Shape-only description used to build an [`Mlp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { out: usize, activation: Activation },
    L2Normalize,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    input_dim: usize,
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.layers == other.layers
    }
}

/// Activations recorded by [`Mlp::forward`] for an exact backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to every layer, then the final output.
    activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations
            .last()
            .expect("cache holds at least the input")
    }
}

/// Parameter gradients, one flat block per weight matrix and bias vector,
/// in layer declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(blocks: &[&[f64]]) -> Self {
        Gradients {
            blocks: blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn concat(mut self, other: Gradients) -> Gradients {
        self.blocks.extend(other.blocks);
        self
    }
}

impl Mlp {
    /// Uniform fan-in initialization: weights and biases in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random(input_dim: usize, specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = input_dim;
        for spec in specs {
            match *spec {
                LayerSpec::Dense { out, activation } => {
                    let bound = 1.0 / (width as f64).sqrt();
                    let weight: Vec<f64> = (0..width * out)
                        .map(|_| rng.random_range(-bound..=bound))
                        .collect();
                    let bias = (0..out).map(|_| rng.random_range(-bound..=bound)).collect();
                    layers.push(Layer::Dense(Dense {
                        weight: Matrix::from_vec(width, out, weight)?,
                        bias,
                        activation,
                    }));
                    width = out;
                }
                LayerSpec::L2Normalize => layers.push(Layer::L2Normalize),
            }
        }
        Self::from_layers(input_dim, layers)
    }

    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut width = input_dim;
        for layer in &layers {
            if let Layer::Dense(d) = layer {
                if d.weight.rows() != width {
                    return Err(Error::DimensionMismatch {
                        context: "Mlp layer chain",
                        expected: width,
                        actual: d.weight.rows(),
                    });
                }
                if d.bias.len() != d.weight.cols() {
                    return Err(Error::DimensionMismatch {
                        context: "Mlp bias",
                        expected: d.weight.cols(),
                        actual: d.bias.len(),
                    });
                }
                width = d.weight.cols();
            }
        }
        Ok(Mlp {
            layers,
            input_dim,
            version: fresh_version(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.weight.cols()),
                Layer::L2Normalize => None,
            })
            .unwrap_or(self.input_dim)
    }

    /// Layer shape description, enough to rebuild an identically shaped net.
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => LayerSpec::Dense {
                    out: d.weight.cols(),
                    activation: d.activation,
                },
                Layer::L2Normalize => LayerSpec::L2Normalize,
            })
            .collect()
    }

    pub fn param_blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::Dense(d) = layer {
                out.push(d.weight.as_slice());
                out.push(d.bias.as_slice());
            }
        }
        out
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = fresh_version();
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Dense(d) = layer {
                out.push(d.weight.as_mut_slice());
                out.push(d.bias.as_mut_slice());
            }
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if input.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "Mlp::forward input width",
                expected: self.input_dim,
                actual: input.cols(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let x = activations.last().expect("nonempty");
            let y = match layer {
                Layer::Dense(d) => {
                    let mut y = x.matmul(&d.weight)?;
                    let width = y.cols();
                    parallel::for_each_row(y.as_mut_slice(), width, |_, row| {
                        for (v, b) in row.iter_mut().zip(&d.bias) {
                            *v += b;
                            if d.activation == Activation::Relu && *v < 0.0 {
                                *v = 0.0;
                            }
                        }
                    });
                    y
                }
                Layer::L2Normalize => {
                    let mut y = x.clone();
                    let width = y.cols();
                    parallel::for_each_row(y.as_mut_slice(), width, |_, row| {
                        let n = dot(row, row).sqrt().max(NORM_EPS);
                        row.iter_mut().for_each(|v| *v /= n);
                    });
                    y
                }
            };
            activations.push(y);
        }
        let out = activations.last().expect("nonempty").clone();
        Ok((
            out,
            ForwardCache {
                version: self.version,
                activations,
            },
        ))
    }

    /// Backpropagate `output_grad` through the cached forward pass.
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &Matrix,
    ) -> Result<(Gradients, Matrix)> {
        if cache.version != self.version || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::StaleCache {
                model: self.version,
                cache: cache.version,
            });
        }
        let out = cache.output();
        if output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::backward output_grad",
                expected: out.rows() * out.cols(),
                actual: output_grad.rows() * output_grad.cols(),
            });
        }
        let mut blocks_rev: Vec<Vec<f64>> = Vec::new();
        let mut grad = output_grad.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.activations[idx];
            let y = &cache.activations[idx + 1];
            match layer {
                Layer::Dense(d) => {
                    if d.activation == Activation::Relu {
                        for (g, &v) in grad.as_mut_slice().iter_mut().zip(y.as_slice()) {
                            if v <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    let dw = x.t_matmul(&grad)?;
                    let db = grad.column_sums();
                    let dx = grad.matmul_t(&d.weight)?;
                    blocks_rev.push(db);
                    blocks_rev.push(dw.into_vec());
                    grad = dx;
                }
                Layer::L2Normalize => {
                    let width = grad.cols();
                    parallel::for_each_row(grad.as_mut_slice(), width, |i, g| {
                        let xr = x.row(i);
                        let yr = y.row(i);
                        let n = dot(xr, xr).sqrt();
                        if n < NORM_EPS {
                            g.iter_mut().for_each(|v| *v /= NORM_EPS);
                        } else {
                            let proj = dot(yr, g);
                            for (gv, &yv) in g.iter_mut().zip(yr) {
                                *gv = (*gv - yv * proj) / n;
                            }
                        }
                    });
                }
            }
        }
        blocks_rev.reverse();
        Ok((Gradients { blocks: blocks_rev }, grad))
    }
}
