//! Low-level dense kernels shared by the pure ops and the tape.

/// `c = op(a) · op(b) + beta · c` for row-major buffers.
///
/// `op(a)` is `m × k`; when `trans_a` is set, `a` is stored as `k × m`.
/// `op(b)` is `k × n`; when `trans_b` is set, `b` is stored as `n × k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above pin every buffer to the exact extent the
    // strides address, and `c` does not alias `a` or `b` (distinct borrows).
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

/// Spatial geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// `None` when the kernel does not fit inside the padded input.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        let ph = height + 2 * padding;
        let pw = width + 2 * padding;
        if kernel_h > ph || kernel_w > pw || stride == 0 {
            return None;
        }
        Some(ConvGeometry {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (ph - kernel_h) / stride + 1,
            out_w: (pw - kernel_w) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unfolds one `C × H × W` image into a `(C·kh·kw) × (out_h·out_w)` matrix.
pub fn im2col(input: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    debug_assert_eq!(input.len(), g.in_len());
    debug_assert_eq!(cols.len(), g.patch_len() * g.out_len());
    if g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0 {
        cols.copy_from_slice(input);
        return;
    }
    let out_len = g.out_len();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * out_len..(row + 1) * out_len];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto the image.
pub fn col2im(cols: &[f64], g: &ConvGeometry, out: &mut [f64]) {
    debug_assert_eq!(out.len(), g.in_len());
    debug_assert_eq!(cols.len(), g.patch_len() * g.out_len());
    if g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0 {
        out.iter_mut().zip(cols).for_each(|(o, c)| *o += c);
        return;
    }
    let out_len = g.out_len();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * out_len..(row + 1) * out_len];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Integer bin edges `[start, end)` covering `[lo, hi)` split into `bins` parts.
///
/// The region is widened to whole cells with `floor(lo)` / `ceil(hi)` and
/// clamped to `[0, extent)`; bin `j` spans
/// `start + floor(j·len/bins) .. start + ceil((j+1)·len/bins)`.
pub fn roi_bins(lo: f64, hi: f64, extent: usize, bins: usize) -> Vec<(usize, usize)> {
    let start = (lo.floor().max(0.0) as usize).min(extent - 1);
    let end = (hi.ceil() as usize).clamp(start + 1, extent);
    let len = end - start;
    (0..bins)
        .map(|j| {
            let b0 = start + (j * len) / bins;
            let b1 = start + ((j + 1) * len).div_ceil(bins);
            (b0, b1.max(b0 + 1).min(end))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes_agree_with_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut naive = vec![0.0; 8];
        for i in 0..2 {
            for j in 0..4 {
                for p in 0..3 {
                    naive[i * 4 + j] += a[i * 3 + p] * b[p * 4 + j];
                }
            }
        }
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, naive);

        let at: Vec<f64> = (0..3).flat_map(|p| (0..2).map(move |i| (i * 3 + p) as f64)).collect();
        let bt: Vec<f64> = (0..4)
            .flat_map(|j| (0..3).map(move |p| ((p * 4 + j) as f64) * 0.5 - 1.0))
            .collect();
        let mut c2 = vec![0.0; 8];
        gemm(2, 3, 4, &at, true, &bt, true, &mut c2, 0.0);
        assert_eq!(c2, naive);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeometry::new(2, 5, 4, 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..g.in_len()).map(|v| (v as f64).sin()).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.out_len())
            .map(|v| (v as f64 * 0.7).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn bins_cover_region() {
        assert_eq!(roi_bins(0.0, 4.0, 4, 2), vec![(0, 2), (2, 4)]);
        assert_eq!(roi_bins(0.0, 4.0, 4, 4), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        // fractional box widens to whole cells
        assert_eq!(roi_bins(0.5, 2.2, 8, 1), vec![(0, 3)]);
        // more bins than cells: bins overlap but are never empty
        let bins = roi_bins(1.0, 3.0, 8, 5);
        assert!(bins.iter().all(|&(a, b)| b > a && a >= 1 && b <= 3));
    }
}
