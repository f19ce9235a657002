//! Thin safe wrappers over `matrixmultiply` for row-major buffers.

/// `c = a·b + beta·c` where `a` is logically `m x k` and `b` is `k x n`.
///
/// `a_t` / `b_t` mean the buffer holds the transpose, i.e. `a` is stored as
/// `k x m` and `b` as `n x k`, both row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every buffer to the extents and strides
    // passed here, so all accesses stay in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out += v·m` for `m` of shape `v.len() x cols`, row-major.
///
/// Rows are folded in four at a time, left to right, so every output
/// entry sees the same summation order as a plain row-by-row loop.
#[inline(always)]
fn vecmat_acc_body(v: &[f64], m: &[f64], cols: usize, out: &mut [f64]) {
    let rows = v.len();
    let mut i = 0;
    while i + 4 <= rows {
        let (a, b, c, d) = (v[i], v[i + 1], v[i + 2], v[i + 3]);
        let r0 = &m[i * cols..(i + 1) * cols];
        let r1 = &m[(i + 1) * cols..(i + 2) * cols];
        let r2 = &m[(i + 2) * cols..(i + 3) * cols];
        let r3 = &m[(i + 3) * cols..(i + 4) * cols];
        for j in 0..cols {
            out[j] = out[j] + a * r0[j] + b * r1[j] + c * r2[j] + d * r3[j];
        }
        i += 4;
    }
    while i < rows {
        let a = v[i];
        let r = &m[i * cols..(i + 1) * cols];
        for j in 0..cols {
            out[j] += a * r[j];
        }
        i += 1;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn vecmat_acc_avx2(v: &[f64], m: &[f64], cols: usize, out: &mut [f64]) {
    vecmat_acc_body(v, m, cols, out)
}

/// `out += v·m`; see [`vecmat_acc_body`]. Results do not depend on the
/// instruction set picked at run time.
pub(crate) fn vecmat_acc(v: &[f64], m: &[f64], cols: usize, out: &mut [f64]) {
    assert_eq!(m.len(), v.len() * cols);
    assert_eq!(out.len(), cols);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports avx2, checked just above.
        return unsafe { vecmat_acc_avx2(v, m, cols, out) };
    }
    vecmat_acc_body(v, m, cols, out)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
