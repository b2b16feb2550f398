//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its output value and whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes once in
//! reverse order, so each recorded operation is visited exactly once and a
//! value consumed by several nodes receives the sum of their contributions.

use crate::error::{Result, TensorError};
use crate::kernels::{col2im, gemm};
use crate::ops::{self, ConvSaved, LayerNormSaved, RoiBins};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Mul(Var, Var),
    MulRows { x: Var, s: Var },
    Scale(Var, f64),
    Pointwise { x: Var, deriv: Vec<f64> },
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, saved: LayerNormSaved },
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<Option<usize>> },
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, saved: ConvSaved },
    RoiPool { f: Var, bins: Vec<RoiBins> },
    GlobalAvgPool(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every recorded value that
/// requires a gradient.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records an input that gradients are taken with respect to.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = self.any_grad(inputs);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let [r, c] = *t.shape() else {
            return Err(TensorError::shape("transpose", format!("{:?}", t.shape())));
        };
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        let out = Tensor::new([c, r], out)?;
        Ok(self.record(out, Op::Transpose(a), &[a]))
    }

    /// `x · Wᵀ + b` row by row; `W` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(out, Op::Linear { x, w, b }, &inputs))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("elementwise_mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.record(out, Op::Mul(a, b), &[a, b]))
    }

    /// Scales row `i` of `x` (`[N, K]`) by `s[i]` (`s` is `[N, 1]`).
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).as_matrix();
        if self.value(s).numel() != rows || self.value(s).as_matrix().1 != 1 {
            return Err(TensorError::shape(
                "mul_rows",
                format!("{:?} scaled by {:?}", self.shape(x), self.shape(s)),
            ));
        }
        let sv = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * sv[i / cols])
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.record(out, Op::MulRows { x, s }, &[x, s]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.record(out, Op::Scale(x, factor), &[x])
    }

    /// Elementwise map. `f(flat_index, value)` returns the output value and
    /// its derivative with respect to `value`.
    pub fn pointwise(&mut self, x: Var, f: impl Fn(usize, f64) -> (f64, f64)) -> Var {
        let t = self.value(x);
        let mut out = Vec::with_capacity(t.numel());
        let mut deriv = Vec::with_capacity(t.numel());
        for (i, &v) in t.data().iter().enumerate() {
            let (y, d) = f(i, v);
            out.push(y);
            deriv.push(d);
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("shape preserved");
        self.record(out, Op::Pointwise { x, deriv }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.pointwise(x, |_, v| {
            let s = ops::sigmoid_scalar(v);
            (s, s * (1.0 - s))
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.pointwise(x, |_, v| if v > 0.0 { (v, 1.0) } else { (0.0, 0.0) })
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax(self.value(x))?;
        Ok(self.record(out, Op::Softmax(x), &[x]))
    }

    /// Layer norm over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, saved) =
            ops::layer_norm_saved(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.record(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                saved,
            },
            &[x, gamma, beta],
        ))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::arg("concat", "no inputs"));
        };
        let rows = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(TensorError::shape(
                    "concat",
                    format!("part {s:?} does not have {rows} rows"),
                ));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor::new([rows, total], out)?;
        Ok(self.record(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || len == 0 || start + len > s[1] {
            return Err(TensorError::shape(
                "slice_cols",
                format!("columns {start}..{} of {s:?}", start + len),
            ));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let out = Tensor::new([rows, len], out)?;
        Ok(self.record(out, Op::SliceCols { x, start }, &[x]))
    }

    /// Entries `start..start+len` along the leading axis (any rank).
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if len == 0 || start + len > s[0] {
            return Err(TensorError::shape(
                "slice_rows",
                format!("rows {start}..{} of {s:?}", start + len),
            ));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.record(out, Op::SliceRows { x, start }, &[x]))
    }

    /// Builds a `[index.len(), D]` matrix from rows of `x`; `None` yields a
    /// zero row.
    pub fn gather_rows(&mut self, x: Var, index: &[Option<usize>]) -> Result<Var> {
        let (rows, cols) = self.value(x).as_matrix();
        if self.value(x).rank() != 2 || index.is_empty() {
            return Err(TensorError::shape(
                "gather_rows",
                format!("gather {} rows from {:?}", index.len(), self.shape(x)),
            ));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; index.len() * cols];
        for (i, ix) in index.iter().enumerate() {
            if let Some(r) = *ix {
                if r >= rows {
                    return Err(TensorError::shape(
                        "gather_rows",
                        format!("row {r} out of {rows}"),
                    ));
                }
                out[i * cols..(i + 1) * cols].copy_from_slice(&src[r * cols..(r + 1) * cols]);
            }
        }
        let out = Tensor::new([index.len(), cols], out)?;
        Ok(self.record(
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.record(out, Op::Reshape(x), &[x]))
    }

    /// See [`ops::conv2d`].
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (out, saved) = ops::conv2d_saved(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(out, Op::Conv2d { x, w, b, saved }, &inputs))
    }

    /// Pools each region of the `C × H × W` map to `C × out_h × out_w`;
    /// the result is `[regions, C, out_h, out_w]`. See [`ops::roi_avg_pool`].
    pub fn roi_pool(
        &mut self,
        f: Var,
        regions: &[[f64; 4]],
        out_h: usize,
        out_w: usize,
    ) -> Result<Var> {
        let [c, h, w] = *self.shape(f) else {
            return Err(TensorError::shape(
                "roi_avg_pool",
                format!("feature map must be C x H x W, got {:?}", self.shape(f)),
            ));
        };
        if regions.is_empty() {
            return Err(TensorError::arg("roi_avg_pool", "no regions"));
        }
        let per = c * out_h * out_w;
        let mut out = vec![0.0; regions.len() * per];
        let mut bins = Vec::with_capacity(regions.len());
        for (i, &r) in regions.iter().enumerate() {
            let (yb, xb) = ops::roi_region_bins(r, h, w, out_h, out_w)?;
            ops::roi_pool_into(
                self.value(f).data(),
                c,
                h,
                w,
                &yb,
                &xb,
                &mut out[i * per..(i + 1) * per],
            );
            bins.push((yb, xb));
        }
        let out = Tensor::new([regions.len(), c, out_h, out_w], out)?;
        Ok(self.record(out, Op::RoiPool { f, bins }, &[f]))
    }

    /// See [`ops::global_avg_pool`].
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(x))?;
        Ok(self.record(out, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.record(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        self.record(out, Op::Mean(x), &[x])
    }

    /// Gradients of the scalar `output` with respect to every value on the
    /// tape that requires one.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_value = self.value(output);
        if out_value.numel() != 1 {
            return Err(TensorError::NonScalarOutput(out_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|g| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("grad shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(a) {
                    let ga = slot(grads, a, m * k);
                    gemm(m, n, k, g, false, bv.data(), true, ga, 1.0);
                }
                if self.wants(b) {
                    let gb = slot(grads, b, k * n);
                    gemm(k, m, n, av.data(), true, g, false, gb, 1.0);
                }
            }
            &Op::Transpose(a) => {
                if self.wants(a) {
                    let [r, c] = *self.shape(a) else { unreachable!() };
                    let ga = slot(grads, a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            &Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (rows, inp) = xv.as_matrix();
                let outp = wv.shape()[0];
                if self.wants(x) {
                    let gx = slot(grads, x, rows * inp);
                    gemm(rows, outp, inp, g, false, wv.data(), false, gx, 1.0);
                }
                if self.wants(w) {
                    let gw = slot(grads, w, outp * inp);
                    gemm(outp, rows, inp, g, true, xv.data(), false, gw, 1.0);
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let gb = slot(grads, b, outp);
                    for row in g.chunks(outp) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(v) {
                        let gv = slot(grads, v, g.len());
                        gv.iter_mut().zip(g).for_each(|(a, v)| *a += v);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    let bv = self.value(b).data();
                    let ga = slot(grads, a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                if self.wants(b) {
                    let av = self.value(a).data();
                    let gb = slot(grads, b, g.len());
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            &Op::MulRows { x, s } => {
                let cols = self.value(x).as_matrix().1;
                if self.wants(x) {
                    let sv = self.value(s).data();
                    let gx = slot(grads, x, g.len());
                    for k in 0..g.len() {
                        gx[k] += g[k] * sv[k / cols];
                    }
                }
                if self.wants(s) {
                    let xv = self.value(x).data();
                    let gs = slot(grads, s, g.len() / cols);
                    for k in 0..g.len() {
                        gs[k / cols] += g[k] * xv[k];
                    }
                }
            }
            &Op::Scale(x, f) => {
                if self.wants(x) {
                    let gx = slot(grads, x, g.len());
                    gx.iter_mut().zip(g).for_each(|(a, v)| *a += v * f);
                }
            }
            Op::Pointwise { x, deriv } => {
                if self.wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    for k in 0..g.len() {
                        gx[k] += g[k] * deriv[k];
                    }
                }
            }
            &Op::Softmax(x) => {
                if self.wants(x) {
                    let y = node.value.data();
                    let cols = node.value.as_matrix().1;
                    let gx = slot(grads, x, g.len());
                    for ((gr, yr), out) in g
                        .chunks(cols)
                        .zip(y.chunks(cols))
                        .zip(gx.chunks_mut(cols))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for k in 0..cols {
                            out[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let n = self.value(*x).as_matrix().1;
                let gam = self.value(*gamma).data();
                if self.wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    let mut dxh = vec![0.0; n];
                    for (r, gr) in g.chunks(n).enumerate() {
                        let xh = &saved.normalized[r * n..(r + 1) * n];
                        for k in 0..n {
                            dxh[k] = gr[k] * gam[k];
                        }
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let scale = saved.inv_std[r] / n as f64;
                        for k in 0..n {
                            gx[r * n + k] += scale * (n as f64 * dxh[k] - s1 - xh[k] * s2);
                        }
                    }
                }
                if self.wants(*gamma) {
                    let gg = slot(grads, *gamma, n);
                    for (k, (&gv, &xh)) in g.iter().zip(&saved.normalized).enumerate() {
                        gg[k % n] += gv * xh;
                    }
                }
                if self.wants(*beta) {
                    let gb = slot(grads, *beta, n);
                    for (k, &gv) in g.iter().enumerate() {
                        gb[k % n] += gv;
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.wants(p) {
                        let gp = slot(grads, p, rows * w);
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            &Op::SliceCols { x, start } => {
                if self.wants(x) {
                    let [rows, cols] = *self.shape(x) else { unreachable!() };
                    let len = node.value.shape()[1];
                    let gx = slot(grads, x, rows * cols);
                    for r in 0..rows {
                        for c in 0..len {
                            gx[r * cols + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            &Op::SliceRows { x, start } => {
                if self.wants(x) {
                    let inner: usize = self.shape(x)[1..].iter().product();
                    let total = self.value(x).numel();
                    let gx = slot(grads, x, total);
                    gx[start * inner..start * inner + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, v)| *a += v);
                }
            }
            Op::GatherRows { x, index } => {
                if self.wants(*x) {
                    let (rows, cols) = self.value(*x).as_matrix();
                    let gx = slot(grads, *x, rows * cols);
                    for (i, ix) in index.iter().enumerate() {
                        if let Some(r) = *ix {
                            for c in 0..cols {
                                gx[r * cols + c] += g[i * cols + c];
                            }
                        }
                    }
                }
            }
            &Op::Reshape(x) => {
                if self.wants(x) {
                    let gx = slot(grads, x, g.len());
                    gx.iter_mut().zip(g).for_each(|(a, v)| *a += v);
                }
            }
            Op::Conv2d { x, w, b, saved } => {
                let geo = &saved.geometry;
                let (pl, ol) = (geo.patch_len(), geo.out_len());
                let wv = self.value(*w);
                let o = wv.shape()[0];
                for n in 0..saved.batch {
                    let gy = &g[n * o * ol..(n + 1) * o * ol];
                    if self.wants(*w) {
                        let gw = slot(grads, *w, o * pl);
                        let cols = &saved.cols[n * pl * ol..(n + 1) * pl * ol];
                        gemm(o, ol, pl, gy, false, cols, true, gw, 1.0);
                    }
                    if let Some(b) = b.filter(|&b| self.wants(b)) {
                        let gb = slot(grads, b, o);
                        for (oc, chunk) in gy.chunks(ol).enumerate() {
                            gb[oc] += chunk.iter().sum::<f64>();
                        }
                    }
                    if self.wants(*x) {
                        let mut dcols = vec![0.0; pl * ol];
                        gemm(pl, o, ol, wv.data(), true, gy, false, &mut dcols, 0.0);
                        let total = self.value(*x).numel();
                        let gx = slot(grads, *x, total);
                        let il = geo.in_len();
                        col2im(&dcols, geo, &mut gx[n * il..(n + 1) * il]);
                    }
                }
            }
            Op::RoiPool { f, bins } => {
                if self.wants(*f) {
                    let [c, h, w] = *self.shape(*f) else { unreachable!() };
                    let gf = slot(grads, *f, c * h * w);
                    let per = node.value.numel() / bins.len();
                    for (e, (yb, xb)) in bins.iter().enumerate() {
                        let (oh, ow) = (yb.len(), xb.len());
                        let ge = &g[e * per..(e + 1) * per];
                        for ch in 0..c {
                            for (by, &(y0, y1)) in yb.iter().enumerate() {
                                for (bx, &(x0, x1)) in xb.iter().enumerate() {
                                    let v = ge[(ch * oh + by) * ow + bx]
                                        / ((y1 - y0) * (x1 - x0)) as f64;
                                    for y in y0..y1 {
                                        let row = &mut gf[(ch * h + y) * w + x0..(ch * h + y) * w + x1];
                                        row.iter_mut().for_each(|a| *a += v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            &Op::GlobalAvgPool(x) => {
                if self.wants(x) {
                    let total = self.value(x).numel();
                    let hw = total / g.len();
                    let gx = slot(grads, x, total);
                    for (k, a) in gx.iter_mut().enumerate() {
                        *a += g[k / hw] / hw as f64;
                    }
                }
            }
            &Op::Sum(x) => {
                if self.wants(x) {
                    let n = self.value(x).numel();
                    slot(grads, x, n).iter_mut().for_each(|a| *a += g[0]);
                }
            }
            &Op::Mean(x) => {
                if self.wants(x) {
                    let n = self.value(x).numel();
                    let v = g[0] / n as f64;
                    slot(grads, x, n).iter_mut().for_each(|a| *a += v);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}
