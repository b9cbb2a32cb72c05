use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::numkit::{matmul, Matrix, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `in x out`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer, then the final output.
    activations: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl Mlp {
    /// `dims` lists the input width followed by every layer's output width.
    ///
    /// Weights are uniform in `±sqrt(6 / fan_in)` for relu layers and
    /// `±sqrt(6 / (fan_in + fan_out))` otherwise; biases start at zero.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::contract(format!(
                "Mlp::new: {} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::contract("Mlp::new: zero-width layer"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = match activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                Layer {
                    weights: Matrix::from_fn(fan_in, fan_out, |_, _| {
                        rng.uniform_range(-bound, bound)
                    }),
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("Mlp needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::shape("Mlp::from_layers", l.out_dim(), l.bias.len()));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::shape(
                    "Mlp::from_layers",
                    layers[i - 1].out_dim(),
                    l.in_dim(),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("Mlp::forward", self.input_dim(), x.cols()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let mut z = matmul(activations.last().unwrap(), &layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            activations.push(z);
        }
        let out = activations.last().unwrap().clone();
        Ok((out, MlpCache { activations }))
    }

    pub fn backward(&self, cache: &MlpCache, d_out: &Matrix) -> Result<(MlpGrads, Matrix)> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::contract("Mlp::backward: cache from a different network"));
        }
        let out = cache.activations.last().unwrap();
        if out.shape() != d_out.shape() {
            return Err(Error::shape(
                "Mlp::backward",
                format!("{:?}", out.shape()),
                format!("{:?}", d_out.shape()),
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let y = &cache.activations[l + 1];
            for (d, &yv) in delta.data_mut().iter_mut().zip(y.data()) {
                *d *= layer.activation.derivative_from_output(yv);
            }
            let input = &cache.activations[l];
            let weights = input.matmul_tn(&delta)?;
            let mut bias = vec![0.0; layer.out_dim()];
            for r in delta.iter_rows() {
                for (b, v) in bias.iter_mut().zip(r) {
                    *b += v;
                }
            }
            grads.push(LayerGrads { weights, bias });
            delta = delta.matmul_nt(&layer.weights)?;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl Parameters for MlpGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}
