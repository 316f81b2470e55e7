use crate::error::TensorError;
use crate::tensor::{lit, Scalar, Tensor};

use super::{dropout, join, Activation, LinearLayer, Module, ParamList, Rng};

/// Additive bias for disallowed attention logits. Finite so that fully
/// masked arithmetic never produces NaN.
pub const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Padding,
    Causal,
    Combined,
}

/// Boolean gate `[batch × query_len × key_len]`; `true` means attendable.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    kind: MaskKind,
    batch: usize,
    q_len: usize,
    k_len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Keys at or beyond each sequence's length are blocked for every query.
    pub fn padding(key_lens: &[usize], q_len: usize, k_len: usize) -> Self {
        let mut allowed = Vec::with_capacity(key_lens.len() * q_len * k_len);
        for &len in key_lens {
            for _ in 0..q_len {
                allowed.extend((0..k_len).map(|j| j < len));
            }
        }
        AttentionMask {
            kind: MaskKind::Padding,
            batch: key_lens.len(),
            q_len,
            k_len,
            allowed,
        }
    }

    /// Lower-triangular gate: query `t` sees keys `0..=t`.
    pub fn causal(batch: usize, len: usize) -> Self {
        let mut allowed = Vec::with_capacity(batch * len * len);
        for _ in 0..batch {
            for i in 0..len {
                allowed.extend((0..len).map(|j| j <= i));
            }
        }
        AttentionMask {
            kind: MaskKind::Causal,
            batch,
            q_len: len,
            k_len: len,
            allowed,
        }
    }

    /// Element-wise AND of two masks of equal dimensions.
    pub fn combine(&self, other: &AttentionMask) -> Result<Self, TensorError> {
        if self.dims() != other.dims() {
            return Err(TensorError::ShapeMismatch {
                op: "mask_combine",
                lhs: self.dims().to_vec(),
                rhs: other.dims().to_vec(),
            });
        }
        Ok(AttentionMask {
            kind: MaskKind::Combined,
            batch: self.batch,
            q_len: self.q_len,
            k_len: self.k_len,
            allowed: self.allowed.iter().zip(&other.allowed).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.batch, self.q_len, self.k_len]
    }

    pub fn is_allowed(&self, b: usize, q: usize, k: usize) -> bool {
        self.allowed[(b * self.q_len + q) * self.k_len + k]
    }

    /// Additive logit bias `[batch·heads × q_len × k_len]`.
    ///
    /// A query row with no attendable key is redirected to key 0.
    fn bias<T: Scalar>(&self, heads: usize) -> Result<Tensor<T>, TensorError> {
        let blocked: T = lit(MASKED_LOGIT);
        let row_len = self.k_len;
        let mut per_batch: Vec<T> = Vec::with_capacity(self.allowed.len());
        let mut empty_rows = 0usize;
        for row in self.allowed.chunks(row_len) {
            let all_blocked = !row.iter().any(|&a| a);
            if all_blocked {
                empty_rows += 1;
            }
            per_batch.extend(row.iter().enumerate().map(|(j, &a)| {
                if a || (all_blocked && j == 0) {
                    T::zero()
                } else {
                    blocked
                }
            }));
        }
        if empty_rows > 0 {
            log::debug!("attention mask has {empty_rows} fully blocked rows; forcing key 0");
        }
        let block = self.q_len * self.k_len;
        let mut data = Vec::with_capacity(per_batch.len() * heads);
        for b in 0..self.batch {
            for _ in 0..heads {
                data.extend_from_slice(&per_batch[b * block..(b + 1) * block]);
            }
        }
        Tensor::new(data, &[self.batch * heads, self.q_len, self.k_len])
    }
}

/// Scaled dot-product attention with `n_heads` heads and separate
/// query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention<T: Scalar = f32> {
    n_heads: usize,
    d_model: usize,
    pub query: LinearLayer<T>,
    pub key: LinearLayer<T>,
    pub value: LinearLayer<T>,
    pub output: LinearLayer<T>,
    dropout_rate: f64,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(d_model: usize, n_heads: usize, dropout_rate: f64, rng: &mut Rng) -> Result<Self, TensorError> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(TensorError::InvalidArgument {
                op: "attention",
                reason: format!("d_model {d_model} not divisible by {n_heads} heads"),
            });
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(TensorError::InvalidArgument {
                op: "attention",
                reason: format!("dropout {dropout_rate} outside [0, 1)"),
            });
        }
        Ok(MultiHeadAttention {
            n_heads,
            d_model,
            query: LinearLayer::new(d_model, d_model, Activation::Identity, rng),
            key: LinearLayer::new(d_model, d_model, Activation::Identity, rng),
            value: LinearLayer::new(d_model, d_model, Activation::Identity, rng),
            output: LinearLayer::new(d_model, d_model, Activation::Identity, rng),
            dropout_rate,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn forward(
        &self,
        query: &Tensor<T>,
        memory: &Tensor<T>,
        mask: &AttentionMask,
        rng: Option<&mut Rng>,
    ) -> Result<Tensor<T>, TensorError> {
        self.forward_with_weights(query, memory, mask, rng).map(|(out, _)| out)
    }

    /// Returns the output together with the post-softmax attention weights
    /// `[batch·heads × q_len × k_len]`.
    pub fn forward_with_weights(
        &self,
        query: &Tensor<T>,
        memory: &Tensor<T>,
        mask: &AttentionMask,
        rng: Option<&mut Rng>,
    ) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
        let (b, tq, tk) = match (query.shape(), memory.shape()) {
            ([b, tq, dq], [bk, tk, dk]) if *b == *bk && *dq == self.d_model && *dk == self.d_model => {
                (*b, *tq, *tk)
            }
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "attention",
                    lhs: query.shape().to_vec(),
                    rhs: memory.shape().to_vec(),
                })
            }
        };
        if mask.dims() != [b, tq, tk] {
            return Err(TensorError::ShapeMismatch {
                op: "attention_mask",
                lhs: mask.dims().to_vec(),
                rhs: vec![b, tq, tk],
            });
        }
        let (h, hd) = (self.n_heads, self.head_dim());

        let split = |x: Tensor<T>, len: usize| -> Result<Tensor<T>, TensorError> {
            x.reshape(&[b, len, h, hd])?.transpose(1, 2)?.reshape(&[b * h, len, hd])
        };
        let q = split(self.query.forward(query)?, tq)?;
        let k = split(self.key.forward(memory)?, tk)?;
        let v = split(self.value.forward(memory)?, tk)?;

        let scores = q
            .matmul(&k.transpose(1, 2)?)?
            .scale(1.0 / (hd as f64).sqrt())
            .add(&mask.bias(h)?)?;
        let weights = scores.softmax();
        let attended = dropout(&weights, self.dropout_rate, rng)?;
        let context = attended
            .matmul(&v)?
            .reshape(&[b, h, tq, hd])?
            .transpose(1, 2)?
            .reshape(&[b, tq, self.d_model])?;
        Ok((self.output.forward(&context)?, weights))
    }
}

impl<T: Scalar> Module<T> for MultiHeadAttention<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.query.collect_params(&join(prefix, "query"), out);
        self.key.collect_params(&join(prefix, "key"), out);
        self.value.collect_params(&join(prefix, "value"), out);
        self.output.collect_params(&join(prefix, "output"), out);
    }
}
