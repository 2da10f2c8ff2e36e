use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative with respect to the pre-activation; relu'(0) = 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected layer acting on row vectors: `y = act(x W + b)`, `W` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::shape(format!("bias of length {}", weight.ncols()), bias.len()));
        }
        Ok(Self {
            weight: weight.as_standard_layout().into_owned(),
            bias: bias.as_standard_layout().into_owned(),
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-a..a));
        Self { weight, bias: Array1::zeros(fan_out), activation }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out), activation }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn pre_activation(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight);
        z += &self.bias;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients laid out exactly like the [`Autoencoder`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderGrads {
    pub encoder: Vec<LayerGrad>,
    pub decoder: Vec<LayerGrad>,
}

/// Per-layer inputs and pre-activations recorded by [`Autoencoder::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub latent: Array2<f64>,
    pub reconstruction: Array2<f64>,
}

/// MLP autoencoder. Hidden layers use relu, the latent and output layers are linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

impl Autoencoder {
    /// Encoder `input_dim -> widths[0] -> ... -> widths[last]`, decoder mirrored.
    pub fn new<R: Rng>(input_dim: usize, widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.is_empty() || input_dim == 0 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid autoencoder layout {input_dim} -> {widths:?}")));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(widths);
        let last = dims.len() - 2;
        let stack = |dims: &[usize], rng: &mut R| -> Vec<Dense> {
            dims.windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let act = if i == last { Activation::Identity } else { Activation::Relu };
                    Dense::glorot(w[0], w[1], act, rng)
                })
                .collect()
        };
        let encoder = stack(&dims, rng);
        dims.reverse();
        let decoder = stack(&dims, rng);
        Ok(Self { encoder, decoder })
    }

    /// Arbitrary layer stacks; shapes must chain and the decoder must return to the input width.
    pub fn from_layers(encoder: Vec<Dense>, decoder: Vec<Dense>) -> Result<Self> {
        if encoder.is_empty() || decoder.is_empty() {
            return Err(Error::Config("encoder and decoder need at least one layer".into()));
        }
        let all: Vec<&Dense> = encoder.iter().chain(decoder.iter()).collect();
        for pair in all.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!("layer input width {}", pair[0].output_dim()), pair[1].input_dim()));
            }
        }
        let out = decoder.last().map(Dense::output_dim).unwrap_or_default();
        if out != encoder[0].input_dim() {
            return Err(Error::shape(format!("decoder output width {}", encoder[0].input_dim()), out));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().map(Dense::output_dim).unwrap_or_default()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    fn run(layers: &[Dense], x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for layer in layers {
            let mut z = layer.pre_activation(a.view());
            z.mapv_inplace(|v| layer.activation.apply(v));
            a = z;
        }
        a
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!("{} input columns", self.input_dim()), x.ncols()));
        }
        Ok(Self::run(&self.encoder, x))
    }

    pub fn decode(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        if h.ncols() != self.latent_dim() {
            return Err(Error::shape(format!("{} latent columns", self.latent_dim()), h.ncols()));
        }
        Ok(Self::run(&self.decoder, h))
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!("{} input columns", self.input_dim()), x.ncols()));
        }
        let depth = self.encoder.len() + self.decoder.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut a = x.to_owned();
        let mut latent = None;
        for (i, layer) in self.layers().enumerate() {
            let z = layer.pre_activation(a.view());
            let next = z.mapv(|v| layer.activation.apply(v));
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
            if i + 1 == self.encoder.len() {
                latent = Some(a.clone());
            }
        }
        Ok(ForwardCache { inputs, pre, latent: latent.unwrap_or_default(), reconstruction: a })
    }

    /// Backpropagate upstream gradients on the latent `H` and the reconstruction `X̂`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_latent: ArrayView2<f64>,
        grad_recon: ArrayView2<f64>,
    ) -> Result<AutoencoderGrads> {
        if grad_latent.dim() != cache.latent.dim() {
            return Err(Error::shape(format!("{:?}", cache.latent.dim()), format!("{:?}", grad_latent.dim())));
        }
        if grad_recon.dim() != cache.reconstruction.dim() {
            return Err(Error::shape(format!("{:?}", cache.reconstruction.dim()), format!("{:?}", grad_recon.dim())));
        }
        let n_enc = self.encoder.len();
        let layers: Vec<&Dense> = self.layers().collect();
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(layers.len());
        let mut upstream = grad_recon.to_owned();
        for idx in (0..layers.len()).rev() {
            if idx + 1 == n_enc {
                upstream += &grad_latent;
            }
            let layer = layers[idx];
            let z = &cache.pre[idx];
            let mut dz = upstream;
            if layer.activation != Activation::Identity {
                dz.zip_mut_with(z, |g, &zv| *g *= layer.activation.derivative(zv));
            }
            let weight = cache.inputs[idx].t().dot(&dz);
            let bias = dz.sum_axis(Axis(0));
            upstream = dz.dot(&layer.weight.t());
            grads.push(LayerGrad { weight, bias });
        }
        grads.reverse();
        let decoder = grads.split_off(n_enc);
        Ok(AutoencoderGrads { encoder: grads, decoder })
    }

    pub fn zero_grads(&self) -> AutoencoderGrads {
        let zero =
            |l: &Dense| LayerGrad { weight: Array2::zeros(l.weight.raw_dim()), bias: Array1::zeros(l.bias.len()) };
        AutoencoderGrads {
            encoder: self.encoder.iter().map(zero).collect(),
            decoder: self.decoder.iter().map(zero).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Flat views over parameter-shaped storage, in a fixed block order
/// (for each layer, encoder first: weights then biases).
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are stored in standard layout")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are stored in standard layout")
}

impl ParamBlocks for Autoencoder {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layers().flat_map(|l| [slice(&l.weight), slice(&l.bias)]).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut().flat_map(|l| [slice_mut(&mut l.weight), slice_mut(&mut l.bias)]).collect()
    }
}

impl ParamBlocks for AutoencoderGrads {
    fn blocks(&self) -> Vec<&[f64]> {
        self.encoder.iter().chain(self.decoder.iter()).flat_map(|g| [slice(&g.weight), slice(&g.bias)]).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|g| [slice_mut(&mut g.weight), slice_mut(&mut g.bias)])
            .collect()
    }
}
