//! 3x3 zero-padded convolution via im2col and GEMM, forward and backward.

// C = alpha * A * B + beta * C for strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Patch matrix `[cin * 9][h * w]` of a `[cin][h][w]` input.
pub(crate) fn im2col(input: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut col = vec![0.0; cin * 9 * hw];
    for ci in 0..cin {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                let (x0, x1) = (kx.saturating_sub(1), (w + kx).saturating_sub(1).min(w));
                for y in 0..h {
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        continue;
                    }
                    let src = &plane[(sy - 1) * w..sy * w];
                    // destination x maps to source x + kx - 1
                    let dst = &mut row[y * w..(y + 1) * w];
                    let lo = 1usize.saturating_sub(kx);
                    let hi = (w + 1 - kx).min(w);
                    dst[lo..hi].copy_from_slice(&src[x0..x1]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input.
pub(crate) fn col2im(dcol: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; cin * hw];
    for ci in 0..cin {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                let (x0, x1) = (kx.saturating_sub(1), (w + kx).saturating_sub(1).min(w));
                let lo = 1usize.saturating_sub(kx);
                let hi = (w + 1 - kx).min(w);
                for y in 0..h {
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        continue;
                    }
                    let dst = &mut plane[(sy - 1) * w..sy * w];
                    for (d, s) in dst[x0..x1].iter_mut().zip(&row[y * w + lo..y * w + hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// `out[cout][hw] = weight[cout][cin*9] * col + bias`.
pub(crate) fn forward(col: &[f64], weight: &[f64], bias: &[f64], cout: usize, hw: usize) -> Vec<f64> {
    let k = weight.len() / cout;
    let mut out = Vec::with_capacity(cout * hw);
    for b in bias {
        out.extend(std::iter::repeat_n(*b, hw));
    }
    gemm(cout, k, hw, weight, (k, 1), col, (hw, 1), 1.0, &mut out);
    out
}

/// Accumulates weight and bias gradients; returns the patch gradient when
/// `want_input` is set.
pub(crate) fn backward(
    col: &[f64],
    weight: &[f64],
    dout: &[f64],
    cout: usize,
    hw: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let k = weight.len() / cout;
    gemm(cout, hw, k, dout, (hw, 1), col, (1, hw), 1.0, dweight);
    for (db, row) in dbias.iter_mut().zip(dout.chunks_exact(hw)) {
        *db += row.iter().sum::<f64>();
    }
    want_input.then(|| {
        let mut dcol = vec![0.0; k * hw];
        gemm(k, cout, hw, weight, (1, k), dout, (hw, 1), 0.0, &mut dcol);
        dcol
    })
}
