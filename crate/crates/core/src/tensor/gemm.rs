/// `c = a·b + beta·c` on row-major buffers, with optional transposition of
/// either operand. `a` is `n×k` after transposition, `b` is `k×m`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    n: usize,
    k: usize,
    m: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * m);
    if n == 0 || m == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, n as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (m as isize, 1) };
    // SAFETY: the strides above describe exactly the n×k, k×m and n×m
    // row-major buffers whose lengths are asserted.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}
