//! Fully connected networks with hand-written reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match (self, z > 0.0) {
            (_, true) => 1.0,
            (Activation::Relu, false) => 0.0,
            (Activation::LeakyRelu, false) => LEAKY_SLOPE,
        }
    }
}

/// Affine layer `y = x·W + b` with `W` of shape `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Hidden layers use `activation`; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Per-layer inputs and pre-activations recorded by the forward pass.
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases from a seeded stream.
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {layer_sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    w: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].w.nrows()];
        sizes.extend(self.layers.iter().map(|l| l.w.ncols()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols == self.input_dim() {
            Ok(())
        } else {
            Err(Error::dims(self.input_dim(), cols))
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(x)?.0)
    }

    pub fn forward_tape(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(x.ncols())?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w) + &layer.b;
            tape.inputs.push(h);
            h = if l + 1 < self.layers.len() {
                z.mapv(|v| self.activation.apply(v))
            } else {
                z.clone()
            };
            tape.pre.push(z);
        }
        Ok((h, tape))
    }

    /// Gradients of a scalar loss given `d_out = ∂loss/∂output`.
    pub fn backward(&self, tape: &Tape, d_out: Array2<f64>) -> Vec<Dense> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out;
        for l in (0..self.layers.len()).rev() {
            let dw = tape.inputs[l].t().dot(&delta).as_standard_layout().into_owned();
            let db = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut dh = delta.dot(&self.layers[l].w.t());
                dh.zip_mut_with(&tape.pre[l - 1], |d, &z| *d *= self.activation.derivative(z));
                delta = dh;
            }
            grads.push(Dense { w: dw, b: db });
        }
        grads.reverse();
        grads
    }

    /// Parameters in layer order, weights (row-major) before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dims(self.param_count(), flat.len()));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for tensor in [layer.w.as_slice_mut(), layer.b.as_slice_mut()] {
                let tensor = tensor.expect("standard layout");
                tensor.copy_from_slice(&flat[offset..offset + tensor.len()]);
                offset += tensor.len();
            }
        }
        Ok(())
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_slice_mut().expect("standard layout"), l.b.as_slice_mut().expect("standard layout")])
            .collect()
    }
}

pub fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        out.extend(layer.w.iter());
        out.extend(layer.b.iter());
    }
    out
}

pub(crate) fn tensors(layers: &[Dense]) -> Vec<&[f64]> {
    layers
        .iter()
        .flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")])
        .collect()
}
