use super::kernels::{gemm_nn, gemm_nt, gemm_tn, log_softmax_rows, softmax_rows, swap_axes};
use super::{lit, numel, Scalar, Tensor};
use crate::error::TensorError;

/// Which operand of a binary op is expanded over leading axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BroadcastSide {
    None,
    Lhs,
    Rhs,
}

fn strip_leading_ones(shape: &[usize]) -> &[usize] {
    let start = shape.iter().position(|&d| d != 1).unwrap_or(shape.len());
    &shape[start..]
}

/// Leading-axis broadcasting: the smaller operand (after dropping leading
/// unit axes) must equal a suffix of the larger one's shape.
pub(crate) fn broadcast_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<(Vec<usize>, BroadcastSide), TensorError> {
    if a == b {
        return Ok((a.to_vec(), BroadcastSide::None));
    }
    if numel(b) <= numel(a) && a.ends_with(strip_leading_ones(b)) {
        return Ok((a.to_vec(), BroadcastSide::Rhs));
    }
    if numel(a) <= numel(b) && b.ends_with(strip_leading_ones(a)) {
        return Ok((b.to_vec(), BroadcastSide::Lhs));
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

fn last_extent(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

type Pointwise<T> = fn(T, T, T) -> T;

impl<T: Scalar> Tensor<T> {
    fn binary(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: fn(T, T) -> T,
        da: Pointwise<T>,
        db: Pointwise<T>,
    ) -> Result<Tensor<T>, TensorError> {
        let (shape, _) = broadcast_shape(op, self.shape(), other.shape())?;
        let n = numel(&shape);
        let out: Vec<T> = {
            let (ad, bd) = (self.data(), other.data());
            let (na, nb) = (ad.len(), bd.len());
            (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect()
        };
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            shape,
            op,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let (ad, bd) = (a.data(), b.data());
                let (na, nb) = (ad.len(), bd.len());
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); na];
                    for (i, &gi) in g.iter().enumerate() {
                        ga[i % na] += da(ad[i % na], bd[i % nb], gi);
                    }
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); nb];
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % nb] += db(ad[i % na], bd[i % nb], gi);
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.binary(other, "add", |x, y| x + y, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.binary(other, "sub", |x, y| x - y, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.binary(other, "mul", |x, y| x * y, |_, y, g| g * y, |x, _, g| g * x)
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        // derivative from (input, output, upstream)
        df: fn(T, T, T) -> T,
    ) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let saved_out = out.clone();
        let a = self.clone();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            op,
            vec![self.clone()],
            Box::new(move |g| {
                let ad = a.data();
                let ga = ad
                    .iter()
                    .zip(&saved_out)
                    .zip(g)
                    .map(|((&x, &y), &gi)| df(x, y, gi))
                    .collect();
                vec![Some(ga)]
            }),
        )
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        let s: T = lit(s);
        let out: Vec<T> = self.data().iter().map(|&x| x * s).collect();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "scale",
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|&gi| gi * s).collect())]),
        )
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s: T = lit(s);
        let out: Vec<T> = self.data().iter().map(|&x| x + s).collect();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "add_scalar",
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    pub fn log(&self) -> Tensor<T> {
        self.unary("log", |x| x.ln(), |x, _, g| g / x)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y, g| g * y)
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary("tanh", |x| x.tanh(), |_, y, g| g * (T::one() - y * y))
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _, g| if x > T::zero() { g } else { T::zero() },
        )
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum::<T>();
        let n = self.numel();
        Tensor::from_op(
            vec![total],
            Vec::new(),
            "sum",
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / lit::<T>(n as f64);
        let total = self.data().iter().copied().sum::<T>();
        Tensor::from_op(
            vec![total * inv],
            Vec::new(),
            "mean",
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor<T> {
        let n = last_extent(self.shape());
        let out = softmax_rows(&self.data(), n);
        let y = out.clone();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); g.len()];
                for ((grow, yrow), xrow) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((o, &gi), &yi) in xrow.iter_mut().zip(grow).zip(yrow) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Tensor<T> {
        let n = last_extent(self.shape());
        let out = log_softmax_rows(&self.data(), n);
        let y = out.clone();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "log_softmax",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); g.len()];
                for ((grow, yrow), xrow) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let total: T = grow.iter().copied().sum();
                    for ((o, &gi), &yi) in xrow.iter_mut().zip(grow).zip(yrow) {
                        *o = gi - yi.exp() * total;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Normalizes each last-axis row to zero mean and unit variance
    /// (no affine part).
    pub fn layer_norm_core(&self, eps: f64) -> Tensor<T> {
        let n = last_extent(self.shape());
        let eps: T = lit(eps);
        let nn: T = lit(n as f64);
        let data = self.data();
        let rows = data.len() / n;
        let mut out = vec![T::zero(); data.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for (row, orow) in data.chunks(n).zip(out.chunks_mut(n)) {
            let mean = row.iter().copied().sum::<T>() / nn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn;
            let inv = T::one() / (var + eps).sqrt();
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        drop(data);
        let y = out.clone();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            "layer_norm_core",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); g.len()];
                for (r, ((grow, yrow), xrow)) in
                    g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)).enumerate()
                {
                    let mean_g = grow.iter().copied().sum::<T>() / nn;
                    let mean_gy = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>() / nn;
                    for ((o, &gi), &yi) in xrow.iter_mut().zip(grow).zip(yrow) {
                        *o = inv_std[r] * (gi - mean_g - yi * mean_gy);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Batched matrix product. `self` is `[..., m, k]`; `other` is either a
    /// shared `[k, n]` matrix or `[..., k, n]` with the same batch axes.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let batch_dims = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && &sb[..sb.len() - 2] != batch_dims {
            return Err(mismatch());
        }
        let batches = numel(batch_dims);
        let mut shape = batch_dims.to_vec();
        shape.extend([m, n]);

        let mut out = vec![T::zero(); batches * m * n];
        {
            let (ad, bd) = (self.data(), other.data());
            for bi in 0..batches {
                let b_off = if shared_rhs { 0 } else { bi * k * n };
                gemm_nn(
                    &ad[bi * m * k..(bi + 1) * m * k],
                    &bd[b_off..b_off + k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            shape,
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let (ad, bd) = (a.data(), b.data());
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); ad.len()];
                    for bi in 0..batches {
                        let b_off = if shared_rhs { 0 } else { bi * k * n };
                        gemm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bd[b_off..b_off + k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); bd.len()];
                    for bi in 0..batches {
                        let b_off = if shared_rhs { 0 } else { bi * k * n };
                        gemm_tn(
                            &ad[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[b_off..b_off + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&self, a0: usize, a1: usize) -> Result<Tensor<T>, TensorError> {
        let rank = self.rank();
        if a0 >= rank || a1 >= rank {
            return Err(TensorError::InvalidArgument {
                op: "transpose",
                reason: format!("axes ({a0}, {a1}) out of range for rank {rank}"),
            });
        }
        let out = swap_axes(&self.data(), self.shape(), a0, a1);
        let mut shape = self.shape().to_vec();
        shape.swap(a0, a1);
        let out_shape = shape.clone();
        Ok(Tensor::from_op(
            out,
            shape,
            "transpose",
            vec![self.clone()],
            Box::new(move |g| vec![Some(swap_axes(g, &out_shape, a0, a1))]),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                reason: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer = numel(&first.shape()[..axis]);
        let inner = numel(&first.shape()[axis + 1..]);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total_width: usize = widths.iter().sum();

        let mut out = Vec::with_capacity(outer * total_width);
        {
            let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (data, &w) in guards.iter().zip(&widths) {
                    out.extend_from_slice(&data[o * w..(o + 1) * w]);
                }
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(
            out,
            shape,
            "concat",
            parts.to_vec(),
            Box::new(move |g| {
                let mut grads: Vec<Vec<T>> =
                    widths.iter().map(|&w| Vec::with_capacity(outer * w)).collect();
                for o in 0..outer {
                    let mut offset = o * total_width;
                    for (gp, &w) in grads.iter_mut().zip(&widths) {
                        gp.extend_from_slice(&g[offset..offset + w]);
                        offset += w;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Sub-range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<T>, TensorError> {
        let rank = self.rank();
        if axis >= rank || start >= end || end > self.shape()[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{end} on axis {axis} of shape {:?}", self.shape()),
            });
        }
        let outer = numel(&self.shape()[..axis]);
        let inner = numel(&self.shape()[axis + 1..]);
        let full = self.shape()[axis] * inner;
        let (lo, hi) = (start * inner, end * inner);
        let mut out = Vec::with_capacity(outer * (hi - lo));
        {
            let data = self.data();
            for o in 0..outer {
                out.extend_from_slice(&data[o * full + lo..o * full + hi]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = end - start;
        let src_len = self.numel();
        Ok(Tensor::from_op(
            out,
            shape,
            "slice",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); src_len];
                let w = hi - lo;
                for o in 0..outer {
                    gx[o * full + lo..o * full + hi].copy_from_slice(&g[o * w..(o + 1) * w]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Row lookup: `table` is `[vocab, dim]`, result is `ids_shape ++ [dim]`.
    pub fn embedding(
        table: &Tensor<T>,
        ids: &[usize],
        ids_shape: &[usize],
    ) -> Result<Tensor<T>, TensorError> {
        if table.rank() != 2 || numel(ids_shape) != ids.len() {
            return Err(TensorError::ShapeMismatch {
                op: "embedding",
                lhs: table.shape().to_vec(),
                rhs: ids_shape.to_vec(),
            });
        }
        let (vocab, dim) = (table.shape()[0], table.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding",
                index: bad,
                bound: vocab,
            });
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        {
            let data = table.data();
            for &i in ids {
                out.extend_from_slice(&data[i * dim..(i + 1) * dim]);
            }
        }
        let mut shape = ids_shape.to_vec();
        shape.push(dim);
        let ids = ids.to_vec();
        Ok(Tensor::from_op(
            out,
            shape,
            "embedding",
            vec![table.clone()],
            Box::new(move |g| {
                let mut gt = vec![T::zero(); vocab * dim];
                for (r, &i) in ids.iter().enumerate() {
                    for (o, &gi) in gt[i * dim..(i + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
                        *o += gi;
                    }
                }
                vec![Some(gt)]
            }),
        ))
    }

    /// Picks `self[..., ids[r]]` for every last-axis row `r`.
    pub fn gather_last(&self, ids: &[usize]) -> Result<Tensor<T>, TensorError> {
        let n = last_extent(self.shape());
        let rows = self.numel() / n;
        if ids.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "gather_last",
                lhs: self.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_last",
                index: bad,
                bound: n,
            });
        }
        let out: Vec<T> = {
            let data = self.data();
            ids.iter().enumerate().map(|(r, &i)| data[r * n + i]).collect()
        };
        let shape = self.shape()[..self.rank().saturating_sub(1)].to_vec();
        let ids = ids.to_vec();
        let len = self.numel();
        Ok(Tensor::from_op(
            out,
            shape,
            "gather_last",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); len];
                for (r, &i) in ids.iter().enumerate() {
                    gx[r * n + i] += g[r];
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Forward value of `hard`, gradient routed unchanged to `soft`.
    pub fn straight_through(hard: &Tensor<T>, soft: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if hard.shape() != soft.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "straight_through",
                lhs: hard.shape().to_vec(),
                rhs: soft.shape().to_vec(),
            });
        }
        Ok(Tensor::from_op(
            hard.to_vec(),
            hard.shape().to_vec(),
            "straight_through",
            vec![soft.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Index of the maximum along the last axis, per row. Not differentiable.
    pub fn argmax_last(&self) -> Vec<usize> {
        let n = last_extent(self.shape());
        self.data()
            .chunks(n)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}
