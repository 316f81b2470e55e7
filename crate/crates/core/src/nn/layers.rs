use crate::error::TensorError;
use crate::tensor::{Scalar, Tensor};

use super::{dropout, join, Activation, AttentionMask, LayerNorm, LinearLayer, Module, MultiHeadAttention, ParamList, Rng};

/// Position-wise `Linear → ReLU → Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward<T: Scalar = f32> {
    pub hidden: LinearLayer<T>,
    pub output: LinearLayer<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(d_model: usize, ffn_dim: usize, rng: &mut Rng) -> Self {
        FeedForward {
            hidden: LinearLayer::new(d_model, ffn_dim, Activation::Relu, rng),
            output: LinearLayer::new(ffn_dim, d_model, Activation::Identity, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, rate: f64, rng: Option<&mut Rng>) -> Result<Tensor<T>, TensorError> {
        let h = dropout(&self.hidden.forward(x)?, rate, rng)?;
        self.output.forward(&h)
    }
}

impl<T: Scalar> Module<T> for FeedForward<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.hidden.collect_params(&join(prefix, "hidden"), out);
        self.output.collect_params(&join(prefix, "output"), out);
    }
}

/// Post-norm encoder block: self-attention then feed-forward, each wrapped in
/// a residual connection followed by layer norm.
#[derive(Debug, Clone)]
pub struct EncoderLayer<T: Scalar = f32> {
    pub self_attn: MultiHeadAttention<T>,
    pub feed_forward: FeedForward<T>,
    pub norm1: LayerNorm<T>,
    pub norm2: LayerNorm<T>,
    dropout: f64,
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn new(d_model: usize, n_heads: usize, ffn_dim: usize, dropout: f64, rng: &mut Rng) -> Result<Self, TensorError> {
        Ok(EncoderLayer {
            self_attn: MultiHeadAttention::new(d_model, n_heads, dropout, rng)?,
            feed_forward: FeedForward::new(d_model, ffn_dim, rng),
            norm1: LayerNorm::new(d_model),
            norm2: LayerNorm::new(d_model),
            dropout,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        mask: &AttentionMask,
        mut rng: Option<&mut Rng>,
    ) -> Result<Tensor<T>, TensorError> {
        let attn = self.self_attn.forward(x, x, mask, rng.as_deref_mut())?;
        let x = self
            .norm1
            .forward(&x.add(&dropout(&attn, self.dropout, rng.as_deref_mut())?)?)?;
        let ff = self.feed_forward.forward(&x, self.dropout, rng.as_deref_mut())?;
        self.norm2.forward(&x.add(&dropout(&ff, self.dropout, rng)?)?)
    }
}

impl<T: Scalar> Module<T> for EncoderLayer<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.self_attn.collect_params(&join(prefix, "self_attn"), out);
        self.feed_forward.collect_params(&join(prefix, "ffn"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
    }
}

/// Post-norm decoder block: causal self-attention, cross-attention over the
/// encoder memory, then feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderLayer<T: Scalar = f32> {
    pub self_attn: MultiHeadAttention<T>,
    pub cross_attn: MultiHeadAttention<T>,
    pub feed_forward: FeedForward<T>,
    pub norm1: LayerNorm<T>,
    pub norm2: LayerNorm<T>,
    pub norm3: LayerNorm<T>,
    dropout: f64,
}

impl<T: Scalar> DecoderLayer<T> {
    pub fn new(d_model: usize, n_heads: usize, ffn_dim: usize, dropout: f64, rng: &mut Rng) -> Result<Self, TensorError> {
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(d_model, n_heads, dropout, rng)?,
            cross_attn: MultiHeadAttention::new(d_model, n_heads, dropout, rng)?,
            feed_forward: FeedForward::new(d_model, ffn_dim, rng),
            norm1: LayerNorm::new(d_model),
            norm2: LayerNorm::new(d_model),
            norm3: LayerNorm::new(d_model),
            dropout,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        memory: &Tensor<T>,
        self_mask: &AttentionMask,
        memory_mask: &AttentionMask,
        mut rng: Option<&mut Rng>,
    ) -> Result<Tensor<T>, TensorError> {
        let attn = self.self_attn.forward(x, x, self_mask, rng.as_deref_mut())?;
        let x = self
            .norm1
            .forward(&x.add(&dropout(&attn, self.dropout, rng.as_deref_mut())?)?)?;
        let cross = self
            .cross_attn
            .forward(&x, memory, memory_mask, rng.as_deref_mut())?;
        let x = self
            .norm2
            .forward(&x.add(&dropout(&cross, self.dropout, rng.as_deref_mut())?)?)?;
        let ff = self.feed_forward.forward(&x, self.dropout, rng.as_deref_mut())?;
        self.norm3.forward(&x.add(&dropout(&ff, self.dropout, rng)?)?)
    }
}

impl<T: Scalar> Module<T> for DecoderLayer<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.self_attn.collect_params(&join(prefix, "self_attn"), out);
        self.cross_attn.collect_params(&join(prefix, "cross_attn"), out);
        self.feed_forward.collect_params(&join(prefix, "ffn"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
        self.norm3.collect_params(&join(prefix, "norm3"), out);
    }
}
