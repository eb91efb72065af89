//! Dense kernels shared by the forward and backward passes.

use super::Real;

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Eight independent accumulators so the reduction vectorizes.
    let mut acc = [T::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out += op(a) · op(b)` for one matrix pair, where `op(a)` is `m×k` and
/// `op(b)` is `k×n`. Transposed operands are stored row-major in their
/// untransposed layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    out: &mut [T],
) {
    match (trans_a, trans_b) {
        (false, false) => {
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av != T::ZERO {
                        axpy(av, &b[p * n..(p + 1) * n], row);
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let ar = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    out[i * n + j] += dot(ar, &b[j * k..(j + 1) * k]);
                }
            }
        }
        (true, false) => {
            // a is stored k×m
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = a[p * m + i];
                    if av != T::ZERO {
                        axpy(av, brow, &mut out[i * n..(i + 1) * n]);
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = T::ZERO;
                    for p in 0..k {
                        s += a[p * m + i] * b[j * k + p];
                    }
                    out[i * n + j] += s;
                }
            }
        }
    }
}

/// Batched variant of [`gemm_acc`] over `batch` contiguous matrix pairs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bgemm_acc<T: Real>(
    batch: usize,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    out: &mut [T],
) {
    let (sa, sb, so) = (m * k, k * n, m * n);
    for bi in 0..batch {
        gemm_acc(
            m,
            n,
            k,
            &a[bi * sa..(bi + 1) * sa],
            trans_a,
            &b[bi * sb..(bi + 1) * sb],
            trans_b,
            &mut out[bi * so..(bi + 1) * so],
        );
    }
}
