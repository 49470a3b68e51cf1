//! Differentiable tensor graph.
//!
//! A [`Graph`] is a tape of executed operations over dense f32 buffers in
//! N,C,H,W order. Every op builder runs the forward kernel immediately,
//! records how the node was produced, and rejects non-finite outputs.
//! [`Graph::backward`] walks the tape in reverse, accumulating gradients
//! additively for every node that requires them.
//!
//! The graph is rebuilt per training step; parameters live outside it and
//! are registered as leaves (see the model module). Reductions carry an
//! f64 shadow value readable via [`Graph::scalar_f64`] so tests can compare
//! against finite differences without f32 rounding of the objective.

pub mod gemm;
mod kernels;
pub mod serial;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {msg}")]
    ShapeMismatch { op: &'static str, msg: String },
    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },
    #[error("backward target is not scalar-shaped")]
    NotScalar,
    #[error("{op}: {msg}")]
    InvalidArg { op: &'static str, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub usize);

/// Plain tensor value, used for I/O and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorData {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        TensorData { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        TensorData { shape, data: vec![0.0; n] }
    }
}

enum Op {
    Leaf,
    Conv2d { x: TensorId, w: TensorId, b: TensorId, stride: usize, padding: usize, dilation: usize },
    BatchNorm { x: TensorId, gamma: TensorId, beta: TensorId, mean: Vec<f64>, invstd: Vec<f64>, training: bool },
    Relu { x: TensorId },
    Sigmoid { x: TensorId },
    ConcatChannels { xs: Vec<TensorId> },
    SliceChannels { x: TensorId, start: usize },
    Upsample2x { x: TensorId },
    L2NormChannels { x: TensorId, eps: f64 },
    GlobalCorrelation { fs: TensorId, ft: TensorId },
    LocalCorrelation { fs: TensorId, ft: TensorId, radius: usize },
    GridSample { x: TensorId, grid: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: f64 },
    Sum { x: TensorId },
    Mean { x: TensorId },
    MaskedL1 { est: TensorId, gt: Vec<f32>, mask: Vec<bool>, n_val: usize },
    BceWithLogits { logits: TensorId, targets: Vec<f32> },
}

struct Node {
    data: Vec<f32>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
    scalar_f64: Option<f64>,
    op: Op,
}

/// Running statistics owned by a batchnorm layer, updated in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn data(&self, id: TensorId) -> &[f32] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// f64 value of a reduction output, exact to the accumulation.
    pub fn scalar_f64(&self, id: TensorId) -> Option<f64> {
        self.nodes[id.0].scalar_f64
    }

    pub fn to_tensor_data(&self, id: TensorId) -> TensorData {
        TensorData { shape: self.shape(id).to_vec(), data: self.data(id).to_vec() }
    }

    // ── Node creation ────────────────────────────────────────────────

    pub fn leaf(&mut self, td: TensorData, requires_grad: bool) -> Result<TensorId, TensorError> {
        self.push("leaf", td.shape, td.data, requires_grad, Op::Leaf, None)
    }

    pub fn constant(&mut self, td: TensorData) -> Result<TensorId, TensorError> {
        self.leaf(td, false)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        requires_grad: bool,
        op: Op,
        scalar_f64: Option<f64>,
    ) -> Result<TensorId, TensorError> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { data, shape, requires_grad, grad: None, scalar_f64, op });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn dims4(&self, id: TensorId, op: &'static str) -> Result<[usize; 4], TensorError> {
        let s = self.shape(id);
        if s.len() != 4 {
            return Err(TensorError::ShapeMismatch { op, msg: format!("expected 4-d tensor, got {s:?}") });
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    // ── Operations ───────────────────────────────────────────────────

    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<TensorId, TensorError> {
        const OP: &str = "conv2d";
        let [n, c, h, wd] = self.dims4(x, OP)?;
        let [o, ci, kh, kw] = self.dims4(w, OP)?;
        if kh != kw {
            return Err(TensorError::InvalidArg { op: OP, msg: "non-square kernel".into() });
        }
        if ci != c {
            return Err(TensorError::ShapeMismatch { op: OP, msg: format!("input has {c} channels, weight expects {ci}") });
        }
        if self.data(b).len() != o {
            return Err(TensorError::ShapeMismatch { op: OP, msg: "bias length != out channels".into() });
        }
        if stride == 0 || dilation == 0 {
            return Err(TensorError::InvalidArg { op: OP, msg: "stride and dilation must be >= 1".into() });
        }
        if h + 2 * padding < dilation * (kh - 1) + 1 || wd + 2 * padding < dilation * (kw - 1) + 1 {
            return Err(TensorError::ShapeMismatch { op: OP, msg: "kernel larger than padded input".into() });
        }
        let (out, ho, wo) =
            kernels::conv2d_forward(self.data(x), n, c, h, wd, self.data(w), o, kh, self.data(b), stride, padding, dilation);
        let rg = self.any_grad(&[x, w, b]);
        self.push(OP, vec![n, o, ho, wo], out, rg, Op::Conv2d { x, w, b, stride, padding, dilation }, None)
    }

    /// `stats` supplies running statistics; they are consumed in eval mode
    /// and updated in training mode with the given momentum.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
        momentum: f64,
        training: bool,
        stats: &mut BnStats,
    ) -> Result<TensorId, TensorError> {
        const OP: &str = "batchnorm";
        let [n, c, h, w] = self.dims4(x, OP)?;
        if eps <= 0.0 {
            return Err(TensorError::InvalidArg { op: OP, msg: "eps must be positive".into() });
        }
        if self.data(gamma).len() != c || self.data(beta).len() != c || stats.mean.len() != c {
            return Err(TensorError::ShapeMismatch { op: OP, msg: "gamma/beta/stats length != channels".into() });
        }
        let fwd = if training {
            let fwd = kernels::batchnorm_forward(self.data(x), n, c, h * w, self.data(gamma), self.data(beta), eps, None);
            let m = (n * h * w) as f64;
            let bessel = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for ci in 0..c {
                let var = (1.0 / fwd.invstd[ci]).powi(2) - eps;
                stats.mean[ci] = ((1.0 - momentum) * stats.mean[ci] as f64 + momentum * fwd.mean[ci]) as f32;
                stats.var[ci] = ((1.0 - momentum) * stats.var[ci] as f64 + momentum * var.max(0.0) * bessel) as f32;
            }
            fwd
        } else {
            kernels::batchnorm_forward(
                self.data(x),
                n,
                c,
                h * w,
                self.data(gamma),
                self.data(beta),
                eps,
                Some((&stats.mean, &stats.var)),
            )
        };
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            OP,
            vec![n, c, h, w],
            fwd.out,
            rg,
            Op::BatchNorm { x, gamma, beta, mean: fwd.mean, invstd: fwd.invstd, training },
            None,
        )
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let out: Vec<f32> = self.data(x).iter().map(|v| v.max(0.0)).collect();
        let rg = self.requires_grad(x);
        self.push("relu", self.shape(x).to_vec(), out, rg, Op::Relu { x }, None)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let out: Vec<f32> = self.data(x).iter().map(|v| (1.0 / (1.0 + (-(*v as f64)).exp())) as f32).collect();
        let rg = self.requires_grad(x);
        self.push("sigmoid", self.shape(x).to_vec(), out, rg, Op::Sigmoid { x }, None)
    }

    pub fn concat_channels(&mut self, xs: &[TensorId]) -> Result<TensorId, TensorError> {
        const OP: &str = "concat_channels";
        if xs.is_empty() {
            return Err(TensorError::InvalidArg { op: OP, msg: "empty input list".into() });
        }
        let [n, _, h, w] = self.dims4(xs[0], OP)?;
        let mut c_total = 0;
        for &x in xs {
            let [ni, ci, hi, wi] = self.dims4(x, OP)?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(TensorError::ShapeMismatch { op: OP, msg: "inputs disagree on N,H,W".into() });
            }
            c_total += ci;
        }
        let hw = h * w;
        let mut out = vec![0.0f32; n * c_total * hw];
        for ni in 0..n {
            let mut c_off = 0;
            for &x in xs {
                let ci = self.shape(x)[1];
                let src = &self.data(x)[ni * ci * hw..(ni + 1) * ci * hw];
                out[(ni * c_total + c_off) * hw..(ni * c_total + c_off + ci) * hw].copy_from_slice(src);
                c_off += ci;
            }
        }
        let rg = self.any_grad(xs);
        self.push(OP, vec![n, c_total, h, w], out, rg, Op::ConcatChannels { xs: xs.to_vec() }, None)
    }

    pub fn slice_channels(&mut self, x: TensorId, start: usize, end: usize) -> Result<TensorId, TensorError> {
        const OP: &str = "slice_channels";
        let [n, c, h, w] = self.dims4(x, OP)?;
        if start >= end || end > c {
            return Err(TensorError::InvalidArg { op: OP, msg: format!("invalid channel range {start}..{end} of {c}") });
        }
        let hw = h * w;
        let cs = end - start;
        let mut out = vec![0.0f32; n * cs * hw];
        for ni in 0..n {
            let src = &self.data(x)[(ni * c + start) * hw..(ni * c + end) * hw];
            out[ni * cs * hw..(ni + 1) * cs * hw].copy_from_slice(src);
        }
        let rg = self.requires_grad(x);
        self.push(OP, vec![n, cs, h, w], out, rg, Op::SliceChannels { x, start }, None)
    }

    pub fn upsample_bilinear_2x(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        const OP: &str = "upsample_bilinear_2x";
        let [n, c, h, w] = self.dims4(x, OP)?;
        let out = kernels::upsample2x_forward(self.data(x), n, c, h, w);
        let rg = self.requires_grad(x);
        self.push(OP, vec![n, c, 2 * h, 2 * w], out, rg, Op::Upsample2x { x }, None)
    }

    pub fn l2_normalize_channels(&mut self, x: TensorId, eps: f64) -> Result<TensorId, TensorError> {
        const OP: &str = "l2_normalize_channels";
        let [n, c, h, w] = self.dims4(x, OP)?;
        let out = kernels::l2norm_forward(self.data(x), n, c, h * w, eps);
        let rg = self.requires_grad(x);
        self.push(OP, vec![n, c, h, w], out, rg, Op::L2NormChannels { x, eps }, None)
    }

    /// Raw all-pairs correlation volume: channel k = it*W + jt holds
    /// `<fs(., i, j), ft(., it, jt)>` at spatial position (i, j).
    pub fn global_correlation(&mut self, fs: TensorId, ft: TensorId) -> Result<TensorId, TensorError> {
        const OP: &str = "global_correlation";
        let [n, c, h, w] = self.dims4(fs, OP)?;
        if n != 1 {
            return Err(TensorError::InvalidArg { op: OP, msg: "batch must be 1".into() });
        }
        if self.shape(ft) != self.shape(fs) {
            return Err(TensorError::ShapeMismatch { op: OP, msg: "feature maps differ in shape".into() });
        }
        let out = kernels::global_corr_forward(self.data(fs), self.data(ft), c, h * w);
        let rg = self.any_grad(&[fs, ft]);
        self.push(OP, vec![1, h * w, h, w], out, rg, Op::GlobalCorrelation { fs, ft }, None)
    }

    /// Windowed correlation: channel d = (dy+r)*(2r+1)+(dx+r); out-of-bounds
    /// displacements produce 0.
    pub fn local_correlation(&mut self, fs: TensorId, ft: TensorId, radius: usize) -> Result<TensorId, TensorError> {
        const OP: &str = "local_correlation";
        let [n, c, h, w] = self.dims4(fs, OP)?;
        if n != 1 {
            return Err(TensorError::InvalidArg { op: OP, msg: "batch must be 1".into() });
        }
        if self.shape(ft) != self.shape(fs) {
            return Err(TensorError::ShapeMismatch { op: OP, msg: "feature maps differ in shape".into() });
        }
        let out = kernels::local_corr_forward(self.data(fs), self.data(ft), c, h, w, radius);
        let side = 2 * radius + 1;
        let rg = self.any_grad(&[fs, ft]);
        self.push(OP, vec![1, side * side, h, w], out, rg, Op::LocalCorrelation { fs, ft, radius }, None)
    }

    /// Bilinear sampling of `x` at `grid` coordinates (align-corners,
    /// zero padding outside [-1,1]). Grid layout: [n,2,hg,wg], u then v.
    pub fn grid_sample(&mut self, x: TensorId, grid: TensorId) -> Result<TensorId, TensorError> {
        const OP: &str = "grid_sample";
        let [n, c, h, w] = self.dims4(x, OP)?;
        let [ng, two, hg, wg] = self.dims4(grid, OP)?;
        if ng != n || two != 2 {
            return Err(TensorError::ShapeMismatch { op: OP, msg: "grid must be [n,2,h,w]".into() });
        }
        let out = kernels::grid_sample_forward(self.data(x), n, c, h, w, self.data(grid), hg, wg);
        let rg = self.any_grad(&[x, grid]);
        self.push(OP, vec![n, c, hg, wg], out, rg, Op::GridSample { x, grid }, None)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch { op: op_name, msg: "operand shapes differ".into() });
        }
        let out: Vec<f32> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let sf = match (self.scalar_f64(a), self.scalar_f64(b)) {
            (Some(x), Some(y)) if out.len() == 1 => Some(combine_scalars(op_name, x, y)),
            _ => None,
        };
        let rg = self.any_grad(&[a, b]);
        self.push(op_name, self.shape(a).to_vec(), out, rg, op, sf)
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId, TensorError> {
        let out: Vec<f32> = self.data(x).iter().map(|v| (*v as f64 * c) as f32).collect();
        let sf = self.scalar_f64(x).map(|v| v * c);
        let rg = self.requires_grad(x);
        self.push("scale", self.shape(x).to_vec(), out, rg, Op::Scale { x, c }, sf)
    }

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let acc: f64 = self.data(x).iter().map(|v| *v as f64).sum();
        let rg = self.requires_grad(x);
        self.push("sum", vec![1], vec![acc as f32], rg, Op::Sum { x }, Some(acc))
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let n = self.data(x).len();
        if n == 0 {
            return Err(TensorError::InvalidArg { op: "mean", msg: "empty tensor".into() });
        }
        let acc: f64 = self.data(x).iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        let rg = self.requires_grad(x);
        self.push("mean", vec![1], vec![acc as f32], rg, Op::Mean { x }, Some(acc))
    }

    /// Masked mean L1 distance between a 2-channel map tensor [1,2,h,w] and
    /// a constant target in the same planar layout. Empty masks yield 0.
    pub fn masked_l1(&mut self, est: TensorId, gt: &[f32], mask: &[bool]) -> Result<TensorId, TensorError> {
        const OP: &str = "masked_l1";
        let [n, c, h, w] = self.dims4(est, OP)?;
        if n != 1 || c != 2 {
            return Err(TensorError::ShapeMismatch { op: OP, msg: "estimate must be [1,2,h,w]".into() });
        }
        if gt.len() != 2 * h * w || mask.len() != h * w {
            return Err(TensorError::ShapeMismatch { op: OP, msg: "target/mask size mismatch".into() });
        }
        let (loss, n_val) = kernels::masked_l1_forward(self.data(est), gt, mask);
        let rg = self.requires_grad(est);
        self.push(OP, vec![1], vec![loss as f32], rg, Op::MaskedL1 { est, gt: gt.to_vec(), mask: mask.to_vec(), n_val }, Some(loss))
    }

    /// Mean binary cross entropy with logits over all elements.
    pub fn bce_with_logits(&mut self, logits: TensorId, targets: &[f32]) -> Result<TensorId, TensorError> {
        const OP: &str = "bce_with_logits";
        if self.data(logits).len() != targets.len() {
            return Err(TensorError::ShapeMismatch { op: OP, msg: "logits/targets size mismatch".into() });
        }
        if targets.is_empty() {
            return Err(TensorError::InvalidArg { op: OP, msg: "empty targets".into() });
        }
        let loss = kernels::bce_forward(self.data(logits), targets);
        let rg = self.requires_grad(logits);
        self.push(OP, vec![1], vec![loss as f32], rg, Op::BceWithLogits { logits, targets: targets.to_vec() }, Some(loss))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-mode gradient propagation from a scalar node. Gradients
    /// accumulate additively across multiple uses of a tensor.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.data(loss).len() != 1 {
            return Err(TensorError::NotScalar);
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.accumulate(loss, vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad || self.nodes[id].grad.is_none() {
                continue;
            }
            let g = self.nodes[id].grad.take().unwrap();
            let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
            let contributions = self.backprop_op(&op, TensorId(id), &g);
            self.nodes[id].op = op;
            self.nodes[id].grad = Some(g);
            for (target, contrib) in contributions {
                self.accumulate(target, contrib);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, contrib: Vec<f32>) {
        let node = &mut self.nodes[id.0];
        match node.grad.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(&contrib) {
                    *gi += ci;
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    /// Compute per-input gradient contributions for one node. Pure reads.
    fn backprop_op(&self, op: &Op, out: TensorId, g: &[f32]) -> Vec<(TensorId, Vec<f32>)> {
        let mut res: Vec<(TensorId, Vec<f32>)> = Vec::new();
        let want = |graph: &Graph, id: TensorId| graph.nodes[id.0].requires_grad;
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, padding, dilation } => {
                let [n, c, h, wd] = [self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2], self.shape(*x)[3]];
                let [o, _, k, _] = [self.shape(*w)[0], self.shape(*w)[1], self.shape(*w)[2], self.shape(*w)[3]];
                let need_dx = want(self, *x);
                let need_dw = want(self, *w);
                let (dx, dw, db) = kernels::conv2d_backward(
                    g,
                    self.data(*x),
                    n,
                    c,
                    h,
                    wd,
                    self.data(*w),
                    o,
                    k,
                    *stride,
                    *padding,
                    *dilation,
                    need_dx,
                    need_dw,
                );
                if let Some(dx) = dx {
                    res.push((*x, dx));
                }
                if let Some(dw) = dw {
                    res.push((*w, dw));
                }
                if want(self, *b) {
                    res.push((*b, db));
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, invstd, training } => {
                let s = self.shape(*x);
                let (dx, dgamma, dbeta) = kernels::batchnorm_backward(
                    g,
                    self.data(*x),
                    s[0],
                    s[1],
                    s[2] * s[3],
                    self.data(*gamma),
                    mean,
                    invstd,
                    *training,
                );
                if want(self, *x) {
                    res.push((*x, dx));
                }
                if want(self, *gamma) {
                    res.push((*gamma, dgamma));
                }
                if want(self, *beta) {
                    res.push((*beta, dbeta));
                }
            }
            Op::Relu { x } => {
                if want(self, *x) {
                    let dx: Vec<f32> = self.data(*x).iter().zip(g).map(|(v, gi)| if *v > 0.0 { *gi } else { 0.0 }).collect();
                    res.push((*x, dx));
                }
            }
            Op::Sigmoid { x } => {
                if want(self, *x) {
                    let y = self.data(out);
                    let dx: Vec<f32> = y.iter().zip(g).map(|(yi, gi)| gi * yi * (1.0 - yi)).collect();
                    res.push((*x, dx));
                }
            }
            Op::ConcatChannels { xs } => {
                let s = self.shape(out);
                let (n, c_total, hw) = (s[0], s[1], s[2] * s[3]);
                let mut c_off = 0;
                for &x in xs {
                    let ci = self.shape(x)[1];
                    if want(self, x) {
                        let mut dx = vec![0.0f32; n * ci * hw];
                        for ni in 0..n {
                            dx[ni * ci * hw..(ni + 1) * ci * hw]
                                .copy_from_slice(&g[(ni * c_total + c_off) * hw..(ni * c_total + c_off + ci) * hw]);
                        }
                        res.push((x, dx));
                    }
                    c_off += ci;
                }
            }
            Op::SliceChannels { x, start } => {
                if want(self, *x) {
                    let s = self.shape(*x);
                    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                    let cs = self.shape(out)[1];
                    let mut dx = vec![0.0f32; n * c * hw];
                    for ni in 0..n {
                        dx[(ni * c + start) * hw..(ni * c + start + cs) * hw]
                            .copy_from_slice(&g[ni * cs * hw..(ni + 1) * cs * hw]);
                    }
                    res.push((*x, dx));
                }
            }
            Op::Upsample2x { x } => {
                if want(self, *x) {
                    let s = self.shape(*x);
                    res.push((*x, kernels::upsample2x_backward(g, s[0], s[1], s[2], s[3])));
                }
            }
            Op::L2NormChannels { x, eps } => {
                if want(self, *x) {
                    let s = self.shape(*x);
                    res.push((*x, kernels::l2norm_backward(g, self.data(*x), s[0], s[1], s[2] * s[3], *eps)));
                }
            }
            Op::GlobalCorrelation { fs, ft } => {
                let s = self.shape(*fs);
                let (dfs, dft) = kernels::global_corr_backward(g, self.data(*fs), self.data(*ft), s[1], s[2] * s[3]);
                if want(self, *fs) {
                    res.push((*fs, dfs));
                }
                if want(self, *ft) {
                    res.push((*ft, dft));
                }
            }
            Op::LocalCorrelation { fs, ft, radius } => {
                let s = self.shape(*fs);
                let (dfs, dft) =
                    kernels::local_corr_backward(g, self.data(*fs), self.data(*ft), s[1], s[2], s[3], *radius);
                if want(self, *fs) {
                    res.push((*fs, dfs));
                }
                if want(self, *ft) {
                    res.push((*ft, dft));
                }
            }
            Op::GridSample { x, grid } => {
                let s = self.shape(*x);
                let gs = self.shape(*grid);
                let (dx, dgrid) = kernels::grid_sample_backward(
                    g,
                    self.data(*x),
                    s[0],
                    s[1],
                    s[2],
                    s[3],
                    self.data(*grid),
                    gs[2],
                    gs[3],
                    want(self, *x),
                    want(self, *grid),
                );
                if let Some(dx) = dx {
                    res.push((*x, dx));
                }
                if let Some(dg) = dgrid {
                    res.push((*grid, dg));
                }
            }
            Op::Add { a, b } => {
                if want(self, *a) {
                    res.push((*a, g.to_vec()));
                }
                if want(self, *b) {
                    res.push((*b, g.to_vec()));
                }
            }
            Op::Sub { a, b } => {
                if want(self, *a) {
                    res.push((*a, g.to_vec()));
                }
                if want(self, *b) {
                    res.push((*b, g.iter().map(|v| -v).collect()));
                }
            }
            Op::Mul { a, b } => {
                if want(self, *a) {
                    res.push((*a, g.iter().zip(self.data(*b)).map(|(gi, bi)| gi * bi).collect()));
                }
                if want(self, *b) {
                    res.push((*b, g.iter().zip(self.data(*a)).map(|(gi, ai)| gi * ai).collect()));
                }
            }
            Op::Scale { x, c } => {
                if want(self, *x) {
                    res.push((*x, g.iter().map(|gi| (*gi as f64 * c) as f32).collect()));
                }
            }
            Op::Sum { x } => {
                if want(self, *x) {
                    res.push((*x, vec![g[0]; self.data(*x).len()]));
                }
            }
            Op::Mean { x } => {
                if want(self, *x) {
                    let n = self.data(*x).len();
                    res.push((*x, vec![(g[0] as f64 / n as f64) as f32; n]));
                }
            }
            Op::MaskedL1 { est, gt, mask, n_val } => {
                if want(self, *est) {
                    res.push((*est, kernels::masked_l1_backward(g[0] as f64, self.data(*est), gt, mask, *n_val)));
                }
            }
            Op::BceWithLogits { logits, targets } => {
                if want(self, *logits) {
                    res.push((*logits, kernels::bce_backward(g[0] as f64, self.data(*logits), targets)));
                }
            }
        }
        res
    }
}

fn combine_scalars(op: &str, x: f64, y: f64) -> f64 {
    match op {
        "add" => x + y,
        "sub" => x - y,
        "mul" => x * y,
        _ => unreachable!(),
    }
}

// ── Grid and argmax helpers ──────────────────────────────────────────

/// Normalized coordinate of a pixel center under align-corners, rounded to
/// f32 so grids, maps and tensors agree on the exact values.
pub fn pixel_center_norm(index: usize, size: usize) -> f32 {
    if size <= 1 {
        return 0.0;
    }
    (2.0 * index as f64 / (size - 1) as f64 - 1.0) as f32
}

/// Identity sampling grid, shape [1,2,h,w]: channel 0 is u (width axis),
/// channel 1 is v (height axis).
pub fn identity_grid(h: usize, w: usize) -> TensorData {
    let mut data = vec![0.0f32; 2 * h * w];
    for i in 0..h {
        for j in 0..w {
            data[i * w + j] = pixel_center_norm(j, w);
            data[h * w + i * w + j] = pixel_center_norm(i, h);
        }
    }
    TensorData::new(vec![1, 2, h, w], data)
}

/// Channel index of the maximum at one spatial position of a [1,C,H,W]
/// buffer; ties break toward the smallest channel index.
pub fn argmax_channel(data: &[f32], channels: usize, hw: usize, position: usize) -> usize {
    let mut best = 0;
    let mut best_v = f32::NEG_INFINITY;
    for c in 0..channels {
        let v = data[c * hw + position];
        if v > best_v {
            best_v = v;
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests;
