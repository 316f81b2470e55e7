// Raw loops over row-major buffers. All kernels are sequential so results
// are bit-reproducible for a fixed input.

use super::Scalar;

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
pub(crate) fn gemm_nt<T: Scalar>(g: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out[i * k + p] += acc;
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Swaps axes `a0` and `a1` of a row-major buffer with the given shape.
pub(crate) fn swap_axes<T: Scalar>(data: &[T], shape: &[usize], a0: usize, a1: usize) -> Vec<T> {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(a0, a1);
    let mut src_strides = strides.clone();
    src_strides.swap(a0, a1);

    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let offset: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

pub(crate) fn softmax_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, orow) in x.chunks(n).zip(out.chunks_mut(n)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            total += *o;
        }
        for o in orow.iter_mut() {
            *o = *o / total;
        }
    }
    out
}

pub(crate) fn log_softmax_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, orow) in x.chunks(n).zip(out.chunks_mut(n)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}
