use crate::error::TensorError;
use crate::tensor::{lit, Scalar, Tensor};

/// Precomputed sinusoidal table, `[max_len × d_model]`.
///
/// Even columns hold `sin(pos / 10000^(2i/d_model))`, odd columns the cosine
/// of the same angle.
#[derive(Debug, Clone)]
pub struct PositionalEncodingTable<T: Scalar = f32> {
    table: Tensor<T>,
    max_len: usize,
    d_model: usize,
}

impl<T: Scalar> PositionalEncodingTable<T> {
    pub fn new(max_len: usize, d_model: usize) -> Result<Self, TensorError> {
        if max_len == 0 || d_model == 0 || !d_model.is_multiple_of(2) {
            return Err(TensorError::InvalidArgument {
                op: "positional_encoding",
                reason: format!("need max_len >= 1 and even d_model, got {max_len} x {d_model}"),
            });
        }
        let mut data = Vec::with_capacity(max_len * d_model);
        for pos in 0..max_len {
            for col in 0..d_model {
                let two_i = (col - col % 2) as f64;
                let angle = pos as f64 / 10000f64.powf(two_i / d_model as f64);
                let v = if col % 2 == 0 { angle.sin() } else { angle.cos() };
                data.push(lit(v));
            }
        }
        Ok(PositionalEncodingTable {
            table: Tensor::new(data, &[max_len, d_model])?,
            max_len,
            d_model,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn table(&self) -> &Tensor<T> {
        &self.table
    }

    /// First `len` rows.
    pub fn rows(&self, len: usize) -> Result<Tensor<T>, TensorError> {
        if len == self.max_len {
            return Ok(self.table.clone());
        }
        self.table.slice(0, 0, len)
    }
}
