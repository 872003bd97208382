//! Matrix products for the forward and backward passes.
//!
//! Sequential and rayon-parallel variants share the same per-row kernel, so
//! results are bit-identical: parallelism only partitions output rows, the
//! reduction order inside each dot product is fixed.

use crate::tensor::Tensor;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_FLOP_THRESHOLD: usize = 32 * 1024;

#[inline]
fn matmul_row(out_row: &mut [f64], a_row: &[f64], b: &Tensor) {
    // out_row[j] = sum_k a_row[k] * b[k, j], accumulated k-major so the
    // inner loop is a contiguous saxpy over b's rows.
    for (k, &av) in a_row.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let brow = b.row(k);
        for (o, &bv) in out_row.iter_mut().zip(brow) {
            *o += av * bv;
        }
    }
}

/// `a (m x k) * b (k x n)`, sequential.
pub fn matmul_seq(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.rows(), "matmul inner dimension mismatch");
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for r in 0..a.rows() {
        matmul_row(out.row_mut(r), a.row(r), b);
    }
    out
}

/// `a (m x k) * b (k x n)`, parallel over output rows.
#[cfg(feature = "parallel")]
pub fn matmul_par(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.rows(), "matmul inner dimension mismatch");
    let n = b.cols();
    let mut out = Tensor::zeros(a.rows(), n);
    out.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(r, out_row)| matmul_row(out_row, a.row(r), b));
    out
}

/// `a * b` with the build's default strategy.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    #[cfg(feature = "parallel")]
    {
        if a.rows() * a.cols() * b.cols() >= PAR_FLOP_THRESHOLD {
            return matmul_par(a, b);
        }
    }
    matmul_seq(a, b)
}

#[inline]
fn matmul_tn_row(out_row: &mut [f64], i: usize, a: &Tensor, b: &Tensor) {
    // out[i, j] = sum_r a[r, i] * b[r, j]
    for r in 0..a.rows() {
        let av = a.get(r, i);
        if av == 0.0 {
            continue;
        }
        let brow = b.row(r);
        for (o, &bv) in out_row.iter_mut().zip(brow) {
            *o += av * bv;
        }
    }
}

/// `a^T (k x m) * b (k x n)` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows(), b.rows(), "matmul_tn batch dimension mismatch");
    let n = b.cols();
    let mut out = Tensor::zeros(a.cols(), n);
    #[cfg(feature = "parallel")]
    {
        if a.rows() * a.cols() * n >= PAR_FLOP_THRESHOLD {
            out.as_mut_slice()
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, out_row)| matmul_tn_row(out_row, i, a, b));
            return out;
        }
    }
    for i in 0..a.cols() {
        matmul_tn_row(out.row_mut(i), i, a, b);
    }
    out
}

#[inline]
fn matmul_nt_row(out_row: &mut [f64], a_row: &[f64], b: &Tensor) {
    // out[r, j] = dot(a_row, b.row(j))
    for (j, o) in out_row.iter_mut().enumerate() {
        let brow = b.row(j);
        let mut acc = 0.0;
        for (&av, &bv) in a_row.iter().zip(brow) {
            acc += av * bv;
        }
        *o = acc;
    }
}

/// `a (m x k) * b^T (n x k)` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.cols(), "matmul_nt inner dimension mismatch");
    let n = b.rows();
    let mut out = Tensor::zeros(a.rows(), n);
    #[cfg(feature = "parallel")]
    {
        if a.rows() * a.cols() * n >= PAR_FLOP_THRESHOLD {
            out.as_mut_slice()
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(r, out_row)| matmul_nt_row(out_row, a.row(r), b));
            return out;
        }
    }
    for r in 0..a.rows() {
        matmul_nt_row(out.row_mut(r), a.row(r), b);
    }
    out
}

/// Column sums, i.e. `1^T * a`.
pub fn col_sums(a: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; a.cols()];
    for r in 0..a.rows() {
        for (o, &v) in out.iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    out
}
