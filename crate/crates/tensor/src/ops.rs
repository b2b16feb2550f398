//! Forward-only versions of every operation the model uses.
//!
//! The tape in [`crate::tape`] records the same computations and adds the
//! backward pass; these functions are the reference semantics and are what
//! the model calls when no gradient is needed.

use crate::error::{Result, TensorError};
use crate::kernels::{gemm, im2col, roi_bins, ConvGeometry};
use crate::tensor::Tensor;

pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;

/// Numerically stable softmax over the last axis.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (rows, cols) = logits.as_matrix();
    if logits.numel() == 0 {
        return Err(TensorError::EmptyLogits);
    }
    let mut out = logits.data().to_vec();
    for r in 0..rows {
        softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Per-row layer normalization statistics kept for the backward pass.
pub(crate) struct LayerNormSaved {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Layer normalization over the last axis with learned scale and shift.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_saved(x, gamma, beta, eps).map(|(t, _)| t)
}

pub(crate) fn layer_norm_saved(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormSaved)> {
    let (rows, n) = x.as_matrix();
    if n < 2 {
        return Err(TensorError::DegenerateNormalization(n));
    }
    if gamma.numel() != n || beta.numel() != n {
        return Err(TensorError::shape(
            "layer_norm",
            format!(
                "gamma/beta length {}/{} for rows of length {n}",
                gamma.numel(),
                beta.numel()
            ),
        ));
    }
    if eps <= 0.0 {
        return Err(TensorError::arg("layer_norm", "eps must be positive"));
    }
    let mut out = vec![0.0; x.numel()];
    let mut normalized = vec![0.0; x.numel()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x.data()[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for i in 0..n {
            let xh = (row[i] - mean) * is;
            normalized[r * n + i] = xh;
            out[r * n + i] = xh * gamma.data()[i] + beta.data()[i];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        LayerNormSaved {
            normalized,
            inv_std,
        },
    ))
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(TensorError::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
    Tensor::new([m, n], out)
}

/// Fully connected layer on the rows of `x`: `x · Wᵀ + b` with `W` shaped
/// `[out, in]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (rows, inp) = x.as_matrix();
    if weight.rank() != 2 || weight.shape()[1] != inp {
        return Err(TensorError::shape(
            "linear",
            format!("input {:?} with weight {:?}", x.shape(), weight.shape()),
        ));
    }
    let outp = weight.shape()[0];
    let mut out = vec![0.0; rows * outp];
    if let Some(b) = bias {
        if b.numel() != outp {
            return Err(TensorError::shape(
                "linear",
                format!("bias length {} for {outp} outputs", b.numel()),
            ));
        }
        for r in 0..rows {
            out[r * outp..(r + 1) * outp].copy_from_slice(b.data());
        }
    }
    gemm(rows, inp, outp, x.data(), false, weight.data(), true, &mut out, 1.0);
    Tensor::new([rows, outp], out)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Splits a conv input into `(batch, channels, height, width)`; rank-3
/// inputs are a batch of one.
pub(crate) fn conv_input_dims(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(TensorError::shape(
            "conv2d",
            format!("input must be rank 3 or 4, got {:?}", x.shape()),
        )),
    }
}

pub(crate) struct ConvSaved {
    pub geometry: ConvGeometry,
    pub batch: usize,
    /// One unfolded patch matrix per batch element.
    pub cols: Vec<f64>,
}

/// 2-D cross-correlation.
///
/// `x` is `C × H × W` (or a batch `N × C × H × W`), `kernels` is
/// `O × C × kh × kw`, `bias` has length `O`.
pub fn conv2d(
    x: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    conv2d_saved(x, kernels, bias, stride, padding).map(|(t, _)| t)
}

pub(crate) fn conv2d_saved(
    x: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, ConvSaved)> {
    let (batch, c, h, w) = conv_input_dims(x)?;
    let [o, kc, kh, kw] = *kernels.shape() else {
        return Err(TensorError::shape(
            "conv2d",
            format!("kernels must be rank 4, got {:?}", kernels.shape()),
        ));
    };
    if kc != c {
        return Err(TensorError::shape(
            "conv2d",
            format!("kernel expects {kc} input channels, input has {c}"),
        ));
    }
    if stride == 0 {
        return Err(TensorError::arg("conv2d", "stride must be >= 1"));
    }
    if let Some(b) = bias {
        if b.numel() != o {
            return Err(TensorError::shape(
                "conv2d",
                format!("bias length {} for {o} output channels", b.numel()),
            ));
        }
    }
    let g = ConvGeometry::new(c, h, w, kh, kw, stride, padding).ok_or(
        TensorError::KernelTooLarge {
            kernel: kh.max(kw),
            height: h + 2 * padding,
            width: w + 2 * padding,
        },
    )?;
    let (pl, ol) = (g.patch_len(), g.out_len());
    let mut cols = vec![0.0; batch * pl * ol];
    let mut out = vec![0.0; batch * o * ol];
    for n in 0..batch {
        let col = &mut cols[n * pl * ol..(n + 1) * pl * ol];
        im2col(&x.data()[n * g.in_len()..(n + 1) * g.in_len()], &g, col);
        let dst = &mut out[n * o * ol..(n + 1) * o * ol];
        if let Some(b) = bias {
            for (oc, chunk) in dst.chunks_mut(ol).enumerate() {
                chunk.fill(b.data()[oc]);
            }
        }
        gemm(o, pl, ol, kernels.data(), false, col, false, dst, 1.0);
    }
    let shape = if x.rank() == 3 {
        vec![o, g.out_h, g.out_w]
    } else {
        vec![batch, o, g.out_h, g.out_w]
    };
    Ok((
        Tensor::new(shape, out)?,
        ConvSaved {
            geometry: g,
            batch,
            cols,
        },
    ))
}

/// Integer bins of one pooled region, `(rows, cols)`.
pub(crate) type RoiBins = (Vec<(usize, usize)>, Vec<(usize, usize)>);

pub(crate) fn roi_region_bins(
    region: [f64; 4],
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
) -> Result<RoiBins> {
    let [x1, y1, x2, y2] = region;
    if !(x2 > x1 && y2 > y1) || [x1, y1, x2, y2].iter().any(|v| !v.is_finite()) {
        return Err(TensorError::DegenerateBox(x1, y1, x2, y2));
    }
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::arg("roi_avg_pool", "output size must be >= 1"));
    }
    Ok((
        roi_bins(y1, y2, height, out_h),
        roi_bins(x1, x2, width, out_w),
    ))
}

/// Region-of-interest average pooling.
///
/// `region` is `[x1, y1, x2, y2]` in feature-map cells. The region is widened
/// to whole cells (`floor` of the low edges, `ceil` of the high edges) and
/// cut into `out_h × out_w` bins with integer edges; each output cell is the
/// plain mean of the cells in its bin.
pub fn roi_avg_pool(f: &Tensor, region: [f64; 4], out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = *f.shape() else {
        return Err(TensorError::shape(
            "roi_avg_pool",
            format!("feature map must be C x H x W, got {:?}", f.shape()),
        ));
    };
    let (ybins, xbins) = roi_region_bins(region, h, w, out_h, out_w)?;
    let mut out = vec![0.0; c * out_h * out_w];
    roi_pool_into(f.data(), c, h, w, &ybins, &xbins, &mut out);
    Tensor::new([c, out_h, out_w], out)
}

pub(crate) fn roi_pool_into(
    f: &[f64],
    c: usize,
    h: usize,
    w: usize,
    ybins: &[(usize, usize)],
    xbins: &[(usize, usize)],
    out: &mut [f64],
) {
    let (oh, ow) = (ybins.len(), xbins.len());
    for ch in 0..c {
        let plane = &f[ch * h * w..(ch + 1) * h * w];
        for (by, &(y0, y1)) in ybins.iter().enumerate() {
            for (bx, &(x0, x1)) in xbins.iter().enumerate() {
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += plane[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                out[(ch * oh + by) * ow + bx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
}

/// Channelwise mean over all spatial cells: `C×H×W → [1, C]`,
/// `N×C×H×W → [N, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (batch, c, h, w) = conv_input_dims(x)?;
    let hw = h * w;
    let out: Vec<f64> = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new([batch, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::vector(&[0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let s = softmax(&Tensor::vector(&[1000.0, 0.0])).unwrap();
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-300_f64.max(f64::EPSILON));
        assert!(s.data()[1] < 1e-300);

        // e^x / Σe^x evaluated directly (safe at this magnitude)
        let x = [2f64.ln(), 0.0];
        let denom: f64 = x.iter().map(|v| v.exp()).sum();
        let s = softmax(&Tensor::vector(&x)).unwrap();
        assert!((s.data()[0] - x[0].exp() / denom).abs() < 1e-15);
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::ones([2]);
        let zeros = Tensor::zeros([2]);
        let eps = DEFAULT_LAYER_NORM_EPS;

        let y = layer_norm(&Tensor::full([4], 3.25), &Tensor::ones([4]), &Tensor::zeros([4]), eps)
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let y = layer_norm(&Tensor::vector(&[1.0, -1.0]), &ones, &zeros, eps).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-4 && (y.data()[1] + 1.0).abs() < 1e-4);

        // (x - 1) / sqrt(1 + eps)
        let y = layer_norm(&Tensor::vector(&[0.0, 2.0]), &ones, &zeros, eps).unwrap();
        let expect = 1.0 / (1.0 + eps).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-4);

        assert_eq!(
            layer_norm(&Tensor::vector(&[1.0]), &Tensor::ones([1]), &Tensor::zeros([1]), eps),
            Err(TensorError::DegenerateNormalization(1))
        );
    }

    #[test]
    fn roi_pool_examples() {
        let f = Tensor::new([1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let y = roi_avg_pool(&f, [0.0, 0.0, 4.0, 4.0], 2, 2).unwrap();
        // brute-force quadrant means
        let quad = |r0: usize, c0: usize| {
            let mut s = 0.0;
            for r in r0..r0 + 2 {
                for c in c0..c0 + 2 {
                    s += (r * 4 + c) as f64;
                }
            }
            s / 4.0
        };
        assert_eq!(y.data(), &[quad(0, 0), quad(0, 2), quad(2, 0), quad(2, 2)]);
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);

        let id = roi_avg_pool(&f, [0.0, 0.0, 4.0, 4.0], 4, 4).unwrap();
        assert_eq!(id.data(), f.data());

        let c = Tensor::full([3, 6, 5], 1.75);
        let y = roi_avg_pool(&c, [1.3, 0.2, 3.9, 5.5], 5, 5).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.75));

        assert!(matches!(
            roi_avg_pool(&f, [2.0, 0.0, 2.0, 4.0], 2, 2),
            Err(TensorError::DegenerateBox(..))
        ));
    }

    #[test]
    fn conv_examples() {
        let x = Tensor::new([3, 4, 5], (0..60).map(|v| v as f64 * 0.1).collect()).unwrap();
        let mut eye = Tensor::zeros([3, 3, 1, 1]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(conv2d(&x, &eye, None, 1, 0).unwrap(), x);
        let zero = conv2d(&x, &Tensor::zeros([2, 3, 3, 3]), None, 1, 1).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let ones = Tensor::ones([1, 3, 3]);
        let y = conv2d(&ones, &Tensor::ones([1, 1, 2, 2]), None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);

        assert!(matches!(
            conv2d(&ones, &Tensor::ones([1, 1, 4, 4]), None, 1, 0),
            Err(TensorError::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn conv_output_size_formula() {
        let x = Tensor::zeros([2, 3, 64, 64]);
        let y = conv2d(&x, &Tensor::zeros([8, 3, 3, 3]), None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 8, 32, 32]);
        let y = conv2d(&Tensor::zeros([2, 64, 64]), &Tensor::zeros([4, 2, 5, 5]), None, 2, 0)
            .unwrap();
        assert_eq!(y.shape(), &[4, 30, 30]);
    }
}
