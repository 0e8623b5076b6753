//! Slice-level numeric kernels shared by the graph ops and the eager helpers.

use super::Real;

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `da += dc · bᵀ` with `dc: m×n`, `b: k×n`, `da: m×k`.
pub(crate) fn gemm_nt<T: Real>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: T = dc_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
            da[i * k + p] += dot;
        }
    }
}

/// `db += aᵀ · dc` with `a: m×k`, `dc: m×n`, `db: k×n`.
pub(crate) fn gemm_tn<T: Real>(a: &[T], dc: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            let db_row = &mut db[p * n..(p + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(dc_row) {
                *d += a_ip * g;
            }
        }
    }
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Numerically stable softmax along `axis`, written into `out`.
pub(crate) fn softmax<T: Real>(x: &[T], shape: &[usize], axis: usize, out: &mut [T]) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len)
                .map(|j| x[idx(j)])
                .fold(T::neg_infinity(), |a, b| a.max(b));
            let mut total = T::zero();
            for j in 0..len {
                let e = (x[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[idx(j)] /= total;
            }
        }
    }
}

/// `dx += y ⊙ (dy − Σ dy ⊙ y)` along `axis`.
pub(crate) fn softmax_backward<T: Real>(
    y: &[T],
    dy: &[T],
    shape: &[usize],
    axis: usize,
    dx: &mut [T],
) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let dot: T = (0..len).map(|j| dy[idx(j)] * y[idx(j)]).sum();
            for j in 0..len {
                dx[idx(j)] += y[idx(j)] * (dy[idx(j)] - dot);
            }
        }
    }
}

/// Layer normalisation over rows of width `d`. Returns the normalised
/// values (before the affine step) and the per-row inverse standard deviation.
pub(crate) fn layer_norm<T: Real>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    d: usize,
    eps: T,
    out: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let width = T::lit(d as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / width;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / width;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (xhat, inv_std)
}

/// Permutes axes: output axis `i` is input axis `perm[i]`.
pub(crate) fn permute<T: Real>(x: &[T], shape: &[usize], perm: &[usize], out: &mut [T]) {
    permute_map(shape, perm, |src, dst| out[dst] = x[src]);
}

/// Calls `f(src_index, dst_index)` for every element of a permutation.
pub(crate) fn permute_map(shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..total {
        f(src, dst);
        // odometer increment over the output index
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}
