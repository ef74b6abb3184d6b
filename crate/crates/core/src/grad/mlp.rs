use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::tape::{Tape, Var};
use crate::grad::tensor::{self, Tensor};

/// Fully connected network: relu on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

/// Tape handles for one registration of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Weight/bias handles interleaved, matching [`Mlp::params`].
    pub fn all(&self) -> Vec<Var> {
        self.weights.iter().zip(&self.biases).flat_map(|(&w, &b)| [w, b]).collect()
    }
}

impl Mlp {
    /// `dims` lists layer widths from input to output, e.g. `[512, 256, 128, 64, 1]`.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer widths {dims:?}")));
        }
        let weights = dims.windows(2).map(|w| Tensor::glorot(w[0], w[1], rng)).collect();
        let biases = dims[1..].iter().map(|&d| Tensor::zeros(1, d)).collect();
        Ok(Mlp { weights, biases })
    }

    pub fn from_parts(weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::format("mlp needs matching weight and bias lists"));
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if b.shape() != (1, w.cols()) || (i > 0 && weights[i - 1].cols() != w.rows()) {
                return Err(Error::format(format!("mlp layer {i} has inconsistent shapes")));
            }
        }
        Ok(Mlp { weights, biases })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.weights.iter().map(Tensor::cols))
            .collect()
    }

    pub fn layers(&self) -> impl Iterator<Item = (&Tensor, &Tensor)> {
        self.weights.iter().zip(&self.biases)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            weights: self.weights.iter().map(|w| tape.param(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.param(b.clone())).collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, input: Var) -> Result<Var> {
        let last = vars.weights.len() - 1;
        let mut h = input;
        for (i, (&w, &b)) in vars.weights.iter().zip(&vars.biases).enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add_bias(z, b)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Tape-free forward pass; bit-identical to [`Mlp::forward`].
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.layers().enumerate() {
            h = tensor::add_bias(&tensor::matmul(&h, w)?, b)?;
            if i < last {
                h = tensor::relu(&h);
            }
        }
        Ok(h)
    }
}
