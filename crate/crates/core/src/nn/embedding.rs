use crate::config::PositionalCombine;
use crate::error::TensorError;
use crate::tensor::{Scalar, Tensor};

use super::{join, normal_param, Activation, LinearLayer, Module, ParamList, PositionalEncodingTable, Rng};

/// Token table → linear projection → positional combination.
///
/// Inputs are either token ids (row lookup) or probability rows over the
/// vocabulary (row mixture, `rows · table`), so gradients can reach whatever
/// produced the rows.
#[derive(Debug, Clone)]
pub struct InputEmbedding<T: Scalar = f32> {
    pub table: Tensor<T>,
    pub projection: LinearLayer<T>,
    positional: PositionalEncodingTable<T>,
    combine: PositionalCombine,
}

impl<T: Scalar> InputEmbedding<T> {
    pub fn new(
        vocab_size: usize,
        embed_dim: usize,
        feature_dim: usize,
        max_positions: usize,
        combine: PositionalCombine,
        rng: &mut Rng,
    ) -> Result<Self, TensorError> {
        Ok(InputEmbedding {
            table: normal_param(&[vocab_size, embed_dim], 1.0, rng),
            projection: LinearLayer::new(embed_dim, feature_dim, Activation::Identity, rng),
            positional: PositionalEncodingTable::new(max_positions, feature_dim)?,
            combine,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn max_positions(&self) -> usize {
        self.positional.max_len()
    }

    pub fn positional(&self) -> &PositionalEncodingTable<T> {
        &self.positional
    }

    /// `ids` is row-major `[batch × len]`; result is `[batch × len × d_model]`.
    pub fn forward_ids(&self, ids: &[usize], batch: usize, len: usize) -> Result<Tensor<T>, TensorError> {
        let embedded = Tensor::embedding(&self.table, ids, &[batch, len])?;
        self.finish(&embedded, batch, len)
    }

    /// `rows` is `[batch × len × vocab]`, each row a distribution (or one-hot).
    pub fn forward_rows(&self, rows: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (batch, len) = match rows.shape() {
            [b, l, v] if *v == self.vocab_size() => (*b, *l),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "embedding_rows",
                    lhs: rows.shape().to_vec(),
                    rhs: self.table.shape().to_vec(),
                })
            }
        };
        let embedded = rows.matmul(&self.table)?;
        self.finish(&embedded, batch, len)
    }

    fn finish(&self, embedded: &Tensor<T>, batch: usize, len: usize) -> Result<Tensor<T>, TensorError> {
        if len > self.positional.max_len() {
            return Err(TensorError::InvalidArgument {
                op: "positional_encoding",
                reason: format!("sequence length {len} exceeds table length {}", self.positional.max_len()),
            });
        }
        let features = self.projection.forward(embedded)?;
        let pe = self.positional.rows(len)?;
        match self.combine {
            PositionalCombine::Add => features.add(&pe),
            PositionalCombine::Concat => {
                let width = self.positional.d_model();
                let tiled: Vec<T> = pe.data().iter().copied().cycle().take(batch * len * width).collect();
                let tiled = Tensor::new(tiled, &[batch, len, width])?;
                Tensor::concat(&[features, tiled], 2)
            }
        }
    }
}

impl<T: Scalar> Module<T> for InputEmbedding<T> {
    fn collect_params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((join(prefix, "table"), self.table.clone()));
        self.projection.collect_params(&join(prefix, "projection"), out);
    }
}
