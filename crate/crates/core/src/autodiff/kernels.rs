//! Dense kernels behind the graph operations. Each output row is computed
//! by one fixed sequence of floating-point operations, so row-parallel and
//! sequential execution agree bitwise.

use crate::parallel;
use crate::real::Real;

/// `a[m,k] · b[k,n]`.
pub fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![F::zero(); m * n];
    parallel::for_each_row(&mut out, n, m * k * n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            axpy(row, aip, &b[p * n..(p + 1) * n]);
        }
    });
    out
}

/// `a[m,n] · b[k,n]ᵀ`, giving `[m,k]`.
pub fn matmul_nt<F: Real>(a: &[F], b: &[F], m: usize, n: usize, k: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![F::zero(); m * k];
    parallel::for_each_row(&mut out, k, m * k * n, |i, row| {
        let a_row = &a[i * n..(i + 1) * n];
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = dot(a_row, &b[j * n..(j + 1) * n]);
        }
    });
    out
}

/// `a[m,k]ᵀ · c[m,n]`, giving `[k,n]`.
pub fn matmul_tn<F: Real>(a: &[F], c: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(c.len(), m * n);
    let mut out = vec![F::zero(); k * n];
    parallel::for_each_row(&mut out, n, m * k * n, |p, row| {
        for i in 0..m {
            axpy(row, a[i * k + p], &c[i * n..(i + 1) * n]);
        }
    });
    out
}

#[inline]
pub fn axpy<F: Real>(y: &mut [F], alpha: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators combined in a fixed order.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

pub fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
