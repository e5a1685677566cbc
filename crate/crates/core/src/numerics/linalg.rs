//! Row-major matrix kernels used by the encoder forward/backward passes.
//!
//! All buffers are flat `&[f64]` with explicit dimensions. The i-k-j loop
//! order keeps the inner loop contiguous so the compiler can vectorize.

/// `out += a (m x k) * b (k x n)`.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out = a * b`, overwriting `out`.
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.fill(0.0);
    matmul_acc(a, b, out, m, k, n);
}

/// `out += a^T (k x m)^T=(m x k) ... ` — computes `a^T * b` where
/// `a` is `k x m` and `b` is `k x n`, accumulating into `out (m x n)`.
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a (m x k) * b^T` where `b` is `n x k`, accumulating into `out (m x n)`.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// Adds `bias` (length n) to every row of `m x n` matrix `a`.
pub fn add_bias_rows(a: &mut [f64], bias: &[f64], n: usize) {
    debug_assert_eq!(a.len() % n, 0);
    for row in a.chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums of an `m x n` matrix accumulated into `out` (length n).
pub fn col_sums_acc(a: &[f64], out: &mut [f64], n: usize) {
    debug_assert_eq!(a.len() % n, 0);
    debug_assert_eq!(out.len(), n);
    for row in a.chunks_exact(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}
