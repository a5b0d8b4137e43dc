//! Fully connected networks with hand-written reverse-mode gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{dot, Parameters, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// One affine layer followed by an activation. `weight` is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(shape_err("Layer weight rank", &[2], &[weight.shape().len()]));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(shape_err("Layer bias", &[weight.shape()[0]], bias.shape()));
        }
        Ok(Layer {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Per-layer inputs and outputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("MLP layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(shape_err(
                    "MLP layer chain",
                    &[pair[0].output_dim()],
                    &[pair[1].input_dim()],
                ));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Glorot-uniform weights, zero biases. `sizes` has one more entry than `activations`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() != activations.len() + 1 {
            return Err(shape_err(
                "MlpParams::init sizes",
                &[activations.len() + 1],
                &[sizes.len()],
            ));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(io, &act)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer::new(
                    Tensor::new(vec![fan_out, fan_in], w)?,
                    Tensor::zeros(vec![fan_out]),
                    act,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.zeros_like(),
                    bias: l.bias.zeros_like(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(shape_err("mlp input", &[self.input_dim()], &[input.len()]));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer_forward(layer, &x);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<MlpTrace> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let y = layer_forward(layer, &x);
            inputs.push(x);
            x = y;
        }
        Ok(MlpTrace { inputs, output: x })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, trace: &MlpTrace, d_output: &[f64], grads: &mut MlpParams) -> Vec<f64> {
        debug_assert_eq!(d_output.len(), self.output_dim());
        let mut delta: Vec<f64> = d_output.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[k];
            let output: &[f64] = if k + 1 < self.layers.len() {
                &trace.inputs[k + 1]
            } else {
                &trace.output
            };
            for (d, &y) in delta.iter_mut().zip(output) {
                *d *= layer.activation.derivative_from_output(y);
            }
            let n_in = layer.input_dim();
            let g = &mut grads.layers[k];
            {
                let gw = g.weight.data_mut();
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (gv, &xv) in row.iter_mut().zip(input) {
                        *gv += d * xv;
                    }
                }
            }
            for (gb, &d) in g.bias.data_mut().iter_mut().zip(&delta) {
                *gb += d;
            }
            let w = layer.weight.data();
            let mut d_in = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for (di, &wv) in d_in.iter_mut().zip(row) {
                    *di += d * wv;
                }
            }
            delta = d_in;
        }
        delta
    }
}

fn layer_forward(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let n_in = layer.input_dim();
    let w = layer.weight.data();
    layer
        .bias
        .data()
        .iter()
        .enumerate()
        .map(|(o, &b)| layer.activation.apply(dot(&w[o * n_in..(o + 1) * n_in], x) + b))
        .collect()
}

impl Parameters for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Applies the network to a tensor holding one input vector.
pub fn mlp_apply(params: &MlpParams, input: &Tensor) -> Result<Tensor> {
    let out = params.forward(input.data())?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mlp output".into()));
    }
    Tensor::from_vec(out)
}
