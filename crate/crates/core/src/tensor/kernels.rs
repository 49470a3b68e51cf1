//! Numeric kernels for the graph operations.
//!
//! Forward kernels produce fresh output buffers; backward kernels produce
//! per-input gradient contributions that the graph accumulates. Reductions
//! accumulate in f64. Convolution runs as im2col + gemm.

use super::gemm::{gemm_nn, gemm_nt};

// ── Convolution ──────────────────────────────────────────────────────

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> usize {
    (input + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1
}

/// Unfold one image [c x h x w] into columns [(c*k*k) x (ho*wo)].
fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
    ho: usize,
    wo: usize,
    cols: &mut [f32],
) {
    debug_assert_eq!(cols.len(), c * k * k * ho * wo);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k * k + ki * k + kj) * ho * wo;
                for oi in 0..ho {
                    let iy = (oi * stride + ki * dilation) as isize - padding as isize;
                    let dst = &mut cols[row + oi * wo..row + (oi + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for oj in 0..wo {
                        let ix = (oj * stride + kj * dilation) as isize - padding as isize;
                        dst[oj] = if ix >= 0 && ix < w as isize { src_row[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back into an image gradient.
fn col2im_add(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
    ho: usize,
    wo: usize,
    dx: &mut [f32],
) {
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k * k + ki * k + kj) * ho * wo;
                for oi in 0..ho {
                    let iy = (oi * stride + ki * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oi * wo..row + (oi + 1) * wo];
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for oj in 0..wo {
                        let ix = (oj * stride + kj * dilation) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oj];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    out_ch: usize,
    k: usize,
    bias: &[f32],
    stride: usize,
    padding: usize,
    dilation: usize,
) -> (Vec<f32>, usize, usize) {
    let ho = conv_out_size(h, k, stride, padding, dilation);
    let wo = conv_out_size(w, k, stride, padding, dilation);
    let ck2 = c * k * k;
    let mut out = vec![0.0f32; n * out_ch * ho * wo];
    let mut cols = vec![0.0f32; ck2 * ho * wo];
    for ni in 0..n {
        im2col(&x[ni * c * h * w..], c, h, w, k, stride, padding, dilation, ho, wo, &mut cols);
        let y = &mut out[ni * out_ch * ho * wo..(ni + 1) * out_ch * ho * wo];
        gemm_nn(out_ch, ck2, ho * wo, weight, &cols, y);
        for o in 0..out_ch {
            let bo = bias[o];
            for v in &mut y[o * ho * wo..(o + 1) * ho * wo] {
                *v += bo;
            }
        }
    }
    (out, ho, wo)
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    grad_out: &[f32],
    x: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    out_ch: usize,
    k: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>, Vec<f32>) {
    let ho = conv_out_size(h, k, stride, padding, dilation);
    let wo = conv_out_size(w, k, stride, padding, dilation);
    let ck2 = c * k * k;
    let mut dx = if need_dx { Some(vec![0.0f32; n * c * h * w]) } else { None };
    let mut dw = if need_dw { Some(vec![0.0f32; out_ch * ck2]) } else { None };
    let mut db = vec![0.0f32; out_ch];
    let mut cols = vec![0.0f32; ck2 * ho * wo];
    let mut wt: Option<Vec<f32>> = None;
    if need_dx {
        // transpose of the weight matrix, [ck2 x out_ch]
        let mut t = vec![0.0f32; ck2 * out_ch];
        for o in 0..out_ch {
            for r in 0..ck2 {
                t[r * out_ch + o] = weight[o * ck2 + r];
            }
        }
        wt = Some(t);
    }
    for ni in 0..n {
        let gy = &grad_out[ni * out_ch * ho * wo..(ni + 1) * out_ch * ho * wo];
        for o in 0..out_ch {
            let mut acc = 0.0f64;
            for v in &gy[o * ho * wo..(o + 1) * ho * wo] {
                acc += *v as f64;
            }
            db[o] += acc as f32;
        }
        if need_dw {
            im2col(&x[ni * c * h * w..], c, h, w, k, stride, padding, dilation, ho, wo, &mut cols);
            gemm_nt(out_ch, ck2, ho * wo, gy, &cols, dw.as_mut().unwrap());
        }
        if let Some(dxb) = dx.as_mut() {
            cols.fill(0.0);
            gemm_nn(ck2, out_ch, ho * wo, wt.as_ref().unwrap(), gy, &mut cols);
            col2im_add(&cols, c, h, w, k, stride, padding, dilation, ho, wo, &mut dxb[ni * c * h * w..(ni + 1) * c * h * w]);
        }
    }
    (dx, dw, db)
}

// ── Batch normalization ──────────────────────────────────────────────

pub struct BnForward {
    pub out: Vec<f32>,
    pub mean: Vec<f64>,
    pub invstd: Vec<f64>,
}

pub fn batchnorm_forward(
    x: &[f32],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[f32],
    beta: &[f32],
    eps: f64,
    stats: Option<(&[f32], &[f32])>, // (running_mean, running_var) for eval mode
) -> BnForward {
    let m = n * hw;
    let mut mean = vec![0.0f64; c];
    let mut invstd = vec![0.0f64; c];
    for ci in 0..c {
        let (mu, var) = match stats {
            Some((rm, rv)) => (rm[ci] as f64, rv[ci] as f64),
            None => {
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for ni in 0..n {
                    for v in &x[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                        let vv = *v as f64;
                        s += vv;
                        s2 += vv * vv;
                    }
                }
                let mu = s / m as f64;
                (mu, (s2 / m as f64 - mu * mu).max(0.0))
            }
        };
        mean[ci] = mu;
        invstd[ci] = 1.0 / (var + eps).sqrt();
    }
    let mut out = vec![0.0f32; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let g = gamma[ci] as f64 * invstd[ci];
            let b = beta[ci] as f64 - mean[ci] * g;
            let base = (ni * c + ci) * hw;
            for i in 0..hw {
                out[base + i] = (x[base + i] as f64 * g + b) as f32;
            }
        }
    }
    BnForward { out, mean, invstd }
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward(
    grad_out: &[f32],
    x: &[f32],
    n: usize,
    c: usize,
    hw: usize,
    gamma: &[f32],
    mean: &[f64],
    invstd: &[f64],
    training: bool,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let m = (n * hw) as f64;
    let mut dx = vec![0.0f32; x.len()];
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for ci in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for i in 0..hw {
                let dy = grad_out[base + i] as f64;
                let xhat = (x[base + i] as f64 - mean[ci]) * invstd[ci];
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
        }
        dgamma[ci] = sum_dy_xhat as f32;
        dbeta[ci] = sum_dy as f32;
        let g = gamma[ci] as f64 * invstd[ci];
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for i in 0..hw {
                let dy = grad_out[base + i] as f64;
                let d = if training {
                    let xhat = (x[base + i] as f64 - mean[ci]) * invstd[ci];
                    g * (dy - sum_dy / m - xhat * sum_dy_xhat / m)
                } else {
                    g * dy
                };
                dx[base + i] = d as f32;
            }
        }
    }
    (dx, dgamma, dbeta)
}

// ── Bilinear upsampling (x2, align-corners) ──────────────────────────

pub fn upsample2x_forward(x: &[f32], n: usize, c: usize, h: usize, w: usize) -> Vec<f32> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; n * c * ho * wo];
    let sy: Vec<(usize, usize, f64)> = (0..ho).map(|i| src_coord(i, h, ho)).collect();
    let sx: Vec<(usize, usize, f64)> = (0..wo).map(|j| src_coord(j, w, wo)).collect();
    for nc in 0..n * c {
        let src = &x[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out[nc * ho * wo..(nc + 1) * ho * wo];
        for i in 0..ho {
            let (y0, y1, wy) = sy[i];
            for j in 0..wo {
                let (x0, x1, wx) = sx[j];
                let v = (src[y0 * w + x0] as f64 * (1.0 - wy) * (1.0 - wx))
                    + (src[y0 * w + x1] as f64 * (1.0 - wy) * wx)
                    + (src[y1 * w + x0] as f64 * wy * (1.0 - wx))
                    + (src[y1 * w + x1] as f64 * wy * wx);
                dst[i * wo + j] = v as f32;
            }
        }
    }
    out
}

fn src_coord(i: usize, size_in: usize, size_out: usize) -> (usize, usize, f64) {
    if size_in == 1 {
        return (0, 0, 0.0);
    }
    let s = i as f64 * (size_in - 1) as f64 / (size_out - 1) as f64;
    let f = s.floor();
    let i0 = f as usize;
    let i1 = (i0 + 1).min(size_in - 1);
    (i0, i1, s - f)
}

pub fn upsample2x_backward(grad_out: &[f32], n: usize, c: usize, h: usize, w: usize) -> Vec<f32> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![0.0f32; n * c * h * w];
    let sy: Vec<(usize, usize, f64)> = (0..ho).map(|i| src_coord(i, h, ho)).collect();
    let sx: Vec<(usize, usize, f64)> = (0..wo).map(|j| src_coord(j, w, wo)).collect();
    for nc in 0..n * c {
        let g = &grad_out[nc * ho * wo..(nc + 1) * ho * wo];
        let d = &mut dx[nc * h * w..(nc + 1) * h * w];
        for i in 0..ho {
            let (y0, y1, wy) = sy[i];
            for j in 0..wo {
                let (x0, x1, wx) = sx[j];
                let gv = g[i * wo + j] as f64;
                d[y0 * w + x0] += (gv * (1.0 - wy) * (1.0 - wx)) as f32;
                d[y0 * w + x1] += (gv * (1.0 - wy) * wx) as f32;
                d[y1 * w + x0] += (gv * wy * (1.0 - wx)) as f32;
                d[y1 * w + x1] += (gv * wy * wx) as f32;
            }
        }
    }
    dx
}

// ── Per-location channel L2 normalization ────────────────────────────

pub fn l2norm_forward(x: &[f32], n: usize, c: usize, hw: usize, eps: f64) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for ni in 0..n {
        for p in 0..hw {
            let mut s = 0.0f64;
            for ci in 0..c {
                let v = x[(ni * c + ci) * hw + p] as f64;
                s += v * v;
            }
            let denom = s.sqrt().max(eps);
            for ci in 0..c {
                let idx = (ni * c + ci) * hw + p;
                out[idx] = (x[idx] as f64 / denom) as f32;
            }
        }
    }
    out
}

pub fn l2norm_backward(grad_out: &[f32], x: &[f32], n: usize, c: usize, hw: usize, eps: f64) -> Vec<f32> {
    let mut dx = vec![0.0f32; x.len()];
    for ni in 0..n {
        for p in 0..hw {
            let mut s = 0.0f64;
            let mut xg = 0.0f64;
            for ci in 0..c {
                let idx = (ni * c + ci) * hw + p;
                let v = x[idx] as f64;
                s += v * v;
                xg += v * grad_out[idx] as f64;
            }
            let norm = s.sqrt();
            if norm > eps {
                let inv = 1.0 / norm;
                let inv3 = inv * inv * inv;
                for ci in 0..c {
                    let idx = (ni * c + ci) * hw + p;
                    dx[idx] = (grad_out[idx] as f64 * inv - x[idx] as f64 * xg * inv3) as f32;
                }
            } else {
                // clamped branch: constant denominator
                let inv = 1.0 / eps;
                for ci in 0..c {
                    let idx = (ni * c + ci) * hw + p;
                    dx[idx] = (grad_out[idx] as f64 * inv) as f32;
                }
            }
        }
    }
    dx
}

// ── Correlation volumes ──────────────────────────────────────────────

/// All-pairs scalar products: out[kt*hw + ps] = <fs(:, ps), ft(:, kt)>.
pub fn global_corr_forward(fs: &[f32], ft: &[f32], c: usize, hw: usize) -> Vec<f32> {
    let fst = to_location_major(fs, c, hw);
    let ftt = to_location_major(ft, c, hw);
    let mut out = vec![0.0f32; hw * hw];
    gemm_nt(hw, hw, c, &ftt, &fst, &mut out);
    out
}

fn to_location_major(x: &[f32], c: usize, hw: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; c * hw];
    for ci in 0..c {
        for p in 0..hw {
            t[p * c + ci] = x[ci * hw + p];
        }
    }
    t
}

fn to_channel_major_add(t: &[f32], c: usize, hw: usize, out: &mut [f32]) {
    for p in 0..hw {
        for ci in 0..c {
            out[ci * hw + p] += t[p * c + ci];
        }
    }
}

pub fn global_corr_backward(grad_out: &[f32], fs: &[f32], ft: &[f32], c: usize, hw: usize) -> (Vec<f32>, Vec<f32>) {
    let fst = to_location_major(fs, c, hw);
    let ftt = to_location_major(ft, c, hw);
    // d ftt[kt, :] += sum_ps g[kt, ps] * fst[ps, :]
    let mut dftt = vec![0.0f32; c * hw];
    gemm_nn(hw, hw, c, grad_out, &fst, &mut dftt);
    // d fst[ps, :] += sum_kt g[kt, ps] * ftt[kt, :]
    let mut gt = vec![0.0f32; hw * hw];
    for kt in 0..hw {
        for ps in 0..hw {
            gt[ps * hw + kt] = grad_out[kt * hw + ps];
        }
    }
    let mut dfst = vec![0.0f32; c * hw];
    gemm_nn(hw, hw, c, &gt, &ftt, &mut dfst);
    let mut dfs = vec![0.0f32; c * hw];
    let mut dft = vec![0.0f32; c * hw];
    to_channel_major_add(&dfst, c, hw, &mut dfs);
    to_channel_major_add(&dftt, c, hw, &mut dft);
    (dfs, dft)
}

/// Windowed scalar products: channel d = (dy+r)*(2r+1) + (dx+r).
pub fn local_corr_forward(fs: &[f32], ft: &[f32], c: usize, h: usize, w: usize, r: usize) -> Vec<f32> {
    let side = 2 * r + 1;
    let hw = h * w;
    let mut out = vec![0.0f32; side * side * hw];
    for (d, (dy, dx)) in displacement_iter(r).enumerate() {
        let plane = &mut out[d * hw..(d + 1) * hw];
        for i in 0..h {
            let ti = i as isize + dy;
            if ti < 0 || ti >= h as isize {
                continue;
            }
            for j in 0..w {
                let tj = j as isize + dx;
                if tj < 0 || tj >= w as isize {
                    continue;
                }
                let (tp, sp) = ((ti as usize) * w + tj as usize, i * w + j);
                let mut acc = 0.0f32;
                for ci in 0..c {
                    acc += fs[ci * hw + sp] * ft[ci * hw + tp];
                }
                plane[sp] = acc;
            }
        }
    }
    out
}

fn displacement_iter(r: usize) -> impl Iterator<Item = (isize, isize)> {
    let side = 2 * r as isize + 1;
    (0..side * side).map(move |d| (d / side - r as isize, d % side - r as isize))
}

pub fn local_corr_backward(
    grad_out: &[f32],
    fs: &[f32],
    ft: &[f32],
    c: usize,
    h: usize,
    w: usize,
    r: usize,
) -> (Vec<f32>, Vec<f32>) {
    let hw = h * w;
    let mut dfs = vec![0.0f32; c * hw];
    let mut dft = vec![0.0f32; c * hw];
    for (d, (dy, dx)) in displacement_iter(r).enumerate() {
        let g = &grad_out[d * hw..(d + 1) * hw];
        for i in 0..h {
            let ti = i as isize + dy;
            if ti < 0 || ti >= h as isize {
                continue;
            }
            for j in 0..w {
                let tj = j as isize + dx;
                if tj < 0 || tj >= w as isize {
                    continue;
                }
                let (tp, sp) = ((ti as usize) * w + tj as usize, i * w + j);
                let gv = g[sp];
                if gv == 0.0 {
                    continue;
                }
                for ci in 0..c {
                    dfs[ci * hw + sp] += gv * ft[ci * hw + tp];
                    dft[ci * hw + tp] += gv * fs[ci * hw + sp];
                }
            }
        }
    }
    (dfs, dft)
}

// ── Grid sampling (align-corners, zero padding) ──────────────────────

/// Snap radius in pixels: a grid built from f32 pixel-center coordinates
/// lands within ~1e-5 px of the integer lattice, and must reproduce the
/// input exactly under the identity grid.
const SNAP_PX: f64 = 1e-4;

struct TapWeights {
    x0: isize,
    y0: isize,
    wx: f64,
    wy: f64,
}

fn tap_weights(u: f32, v: f32, h: usize, w: usize) -> TapWeights {
    // anything beyond one cell outside the image samples pure padding, so
    // wild coordinates clamp there instead of overflowing the index math
    let mut px = ((u as f64 + 1.0) * 0.5 * (w as f64 - 1.0)).clamp(-2.0, w as f64 + 1.0);
    let mut py = ((v as f64 + 1.0) * 0.5 * (h as f64 - 1.0)).clamp(-2.0, h as f64 + 1.0);
    if (px - px.round()).abs() < SNAP_PX {
        px = px.round();
    }
    if (py - py.round()).abs() < SNAP_PX {
        py = py.round();
    }
    let fx = px.floor();
    let fy = py.floor();
    TapWeights { x0: fx as isize, y0: fy as isize, wx: px - fx, wy: py - fy }
}

#[inline]
fn fetch(src: &[f32], h: usize, w: usize, y: isize, x: isize) -> f64 {
    if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
        src[y as usize * w + x as usize] as f64
    } else {
        0.0
    }
}

/// x: [n,c,h,w]; grid: [n,2,hg,wg] (channel 0 = u, 1 = v); out: [n,c,hg,wg].
pub fn grid_sample_forward(
    x: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    grid: &[f32],
    hg: usize,
    wg: usize,
) -> Vec<f32> {
    let hwg = hg * wg;
    let mut out = vec![0.0f32; n * c * hwg];
    for ni in 0..n {
        let gu = &grid[ni * 2 * hwg..ni * 2 * hwg + hwg];
        let gv = &grid[ni * 2 * hwg + hwg..(ni + 1) * 2 * hwg];
        for p in 0..hwg {
            let t = tap_weights(gu[p], gv[p], h, w);
            for ci in 0..c {
                let src = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let v00 = fetch(src, h, w, t.y0, t.x0);
                let v01 = fetch(src, h, w, t.y0, t.x0 + 1);
                let v10 = fetch(src, h, w, t.y0 + 1, t.x0);
                let v11 = fetch(src, h, w, t.y0 + 1, t.x0 + 1);
                let val = v00 * (1.0 - t.wy) * (1.0 - t.wx)
                    + v01 * (1.0 - t.wy) * t.wx
                    + v10 * t.wy * (1.0 - t.wx)
                    + v11 * t.wy * t.wx;
                out[(ni * c + ci) * hwg + p] = val as f32;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn grid_sample_backward(
    grad_out: &[f32],
    x: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    grid: &[f32],
    hg: usize,
    wg: usize,
    need_dx: bool,
    need_dgrid: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let hwg = hg * wg;
    let mut dx = if need_dx { Some(vec![0.0f32; n * c * h * w]) } else { None };
    let mut dgrid = if need_dgrid { Some(vec![0.0f32; n * 2 * hwg]) } else { None };
    for ni in 0..n {
        let gu = &grid[ni * 2 * hwg..ni * 2 * hwg + hwg];
        let gv = &grid[ni * 2 * hwg + hwg..(ni + 1) * 2 * hwg];
        for p in 0..hwg {
            let t = tap_weights(gu[p], gv[p], h, w);
            let mut d_px = 0.0f64;
            let mut d_py = 0.0f64;
            for ci in 0..c {
                let g = grad_out[(ni * c + ci) * hwg + p] as f64;
                if g == 0.0 {
                    continue;
                }
                let src = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let v00 = fetch(src, h, w, t.y0, t.x0);
                let v01 = fetch(src, h, w, t.y0, t.x0 + 1);
                let v10 = fetch(src, h, w, t.y0 + 1, t.x0);
                let v11 = fetch(src, h, w, t.y0 + 1, t.x0 + 1);
                if let Some(dxb) = dx.as_mut() {
                    let plane = &mut dxb[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    scatter(plane, h, w, t.y0, t.x0, g * (1.0 - t.wy) * (1.0 - t.wx));
                    scatter(plane, h, w, t.y0, t.x0 + 1, g * (1.0 - t.wy) * t.wx);
                    scatter(plane, h, w, t.y0 + 1, t.x0, g * t.wy * (1.0 - t.wx));
                    scatter(plane, h, w, t.y0 + 1, t.x0 + 1, g * t.wy * t.wx);
                }
                d_px += g * ((1.0 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                d_py += g * ((1.0 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
            }
            if let Some(dg) = dgrid.as_mut() {
                dg[ni * 2 * hwg + p] = (d_px * 0.5 * (w as f64 - 1.0)) as f32;
                dg[ni * 2 * hwg + hwg + p] = (d_py * 0.5 * (h as f64 - 1.0)) as f32;
            }
        }
    }
    (dx, dgrid)
}

#[inline]
fn scatter(plane: &mut [f32], h: usize, w: usize, y: isize, x: isize, v: f64) {
    if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
        plane[y as usize * w + x as usize] += v as f32;
    }
}

// ── Losses ───────────────────────────────────────────────────────────

/// Masked mean L1 over a 2-channel map (planar layout: u plane then v plane).
/// Returns (loss, n_val).
pub fn masked_l1_forward(est: &[f32], gt: &[f32], mask: &[bool]) -> (f64, usize) {
    let hw = mask.len();
    debug_assert_eq!(est.len(), 2 * hw);
    debug_assert_eq!(gt.len(), 2 * hw);
    let n_val = mask.iter().filter(|m| **m).count();
    if n_val == 0 {
        return (0.0, 0);
    }
    let mut acc = 0.0f64;
    for p in 0..hw {
        if mask[p] {
            acc += (est[p] as f64 - gt[p] as f64).abs();
            acc += (est[hw + p] as f64 - gt[hw + p] as f64).abs();
        }
    }
    (acc / n_val as f64, n_val)
}

pub fn masked_l1_backward(g: f64, est: &[f32], gt: &[f32], mask: &[bool], n_val: usize) -> Vec<f32> {
    let hw = mask.len();
    let mut d = vec![0.0f32; est.len()];
    if n_val == 0 {
        return d;
    }
    let scale = g / n_val as f64;
    for p in 0..hw {
        if mask[p] {
            for ch in [0, hw] {
                let diff = est[ch + p] as f64 - gt[ch + p] as f64;
                d[ch + p] = (scale * sign(diff)) as f32;
            }
        }
    }
    d
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable mean BCE-with-logits over all elements.
pub fn bce_forward(logits: &[f32], targets: &[f32]) -> f64 {
    debug_assert_eq!(logits.len(), targets.len());
    let mut acc = 0.0f64;
    for (z, y) in logits.iter().zip(targets) {
        let z = *z as f64;
        let y = *y as f64;
        acc += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    acc / logits.len() as f64
}

pub fn bce_backward(g: f64, logits: &[f32], targets: &[f32]) -> Vec<f32> {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(z, y)| {
            let s = 1.0 / (1.0 + (-(*z as f64)).exp());
            (g * (s - *y as f64) / n) as f32
        })
        .collect()
}
