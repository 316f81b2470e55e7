//! Neural building blocks: linear layers, layer norm, dropout, sinusoidal
//! positional encoding, multi-head attention and the encoder/decoder layers.

mod attention;
mod embedding;
mod layers;
mod positional;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::tensor::{lit, Scalar, Tensor};

pub use attention::{AttentionMask, MaskKind, MultiHeadAttention, MASKED_LOGIT};
pub use embedding::InputEmbedding;
pub use layers::{DecoderLayer, EncoderLayer, FeedForward};
pub use positional::PositionalEncodingTable;

/// Random source used for initialization, dropout and Gumbel noise.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Named parameter list, in a stable order.
pub type ParamList<T> = Vec<(String, Tensor<T>)>;

/// Anything that owns trainable tensors.
pub trait Module<T: Scalar> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>);

    fn params(&self) -> ParamList<T> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn uniform_param<T: Scalar>(
    shape: &[usize],
    bound: f64,
    rng: &mut Rng,
) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| lit(rng.gen_range(-bound..bound))).collect();
    Tensor::parameter(data, shape).expect("shape matches data")
}

pub(crate) fn normal_param<T: Scalar>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            // Box-Muller
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            lit(std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos())
        })
        .collect();
    Tensor::parameter(data, shape).expect("shape matches data")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

/// `y = f(x·W + b)` applied over the last axis.
#[derive(Debug, Clone)]
pub struct LinearLayer<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    activation: Activation,
}

impl<T: Scalar> LinearLayer<T> {
    /// Uniform init in `±1/sqrt(in_dim)` for both weight and bias.
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        LinearLayer {
            weight: uniform_param(&[in_dim, out_dim], bound, rng),
            bias: uniform_param(&[out_dim], bound, rng),
            activation,
        }
    }

    pub fn from_parts(
        weight: Tensor<T>,
        bias: Tensor<T>,
        activation: Activation,
    ) -> Result<Self, TensorError> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(LinearLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if x.shape().last() != Some(&self.in_dim()) {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let y = if x.rank() == 1 {
            let row = x.reshape(&[1, self.in_dim()])?;
            row.matmul(&self.weight)?.reshape(&[self.out_dim()])?
        } else {
            x.matmul(&self.weight)?
        };
        let y = y.add(&self.bias)?;
        Ok(match self.activation {
            Activation::Identity => y,
            Activation::Relu => y.relu(),
            Activation::Tanh => y.tanh(),
        })
    }
}

impl<T: Scalar> Module<T> for LinearLayer<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm<T: Scalar = f32> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::parameter(vec![T::one(); dim], &[dim]).expect("dim > 0"),
            bias: Tensor::parameter(vec![T::zero(); dim], &[dim]).expect("dim > 0"),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        x.layer_norm_core(LAYER_NORM_EPS).mul(&self.gain)?.add(&self.bias)
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Inverted dropout. Identity when `rng` is `None` (inference) or `rate == 0`.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, rng: Option<&mut Rng>) -> Result<Tensor<T>, TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument {
            op: "dropout",
            reason: format!("rate {rate} outside [0, 1)"),
        });
    }
    let Some(rng) = rng else {
        return Ok(x.clone());
    };
    if rate == 0.0 {
        return Ok(x.clone());
    }
    let keep: T = lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    x.mul(&Tensor::new(mask, x.shape())?)
}
