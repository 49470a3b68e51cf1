//! Synthetic training pairs: procedural base images warped by exact
//! transforms, with ground-truth correspondence maps and validity masks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::{gt_correspondence_map, CorrespondenceMap, GeometricTransform, GeometryError, MatchabilityMask};
use crate::tensor::{pixel_center_norm, TensorData};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("transform invalidates {invalid_frac:.0}% of the mask; pair rejected")]
    ExcessiveMaskLoss { invalid_frac: f64 },
    #[error("base image {bw}x{bh} smaller than target {w}x{h}")]
    BaseTooSmall { bw: usize, bh: usize, w: usize, h: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Planar RGB image, channels-major (3 x h x w), values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageBuf { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn at(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f32) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    /// Bilinear sample at fractional pixel coordinates, zero outside.
    /// Coordinates within 1e-4 px of the integer lattice snap to it, so
    /// warps that are analytically the identity reproduce pixels exactly.
    pub fn sample(&self, c: usize, py: f64, px: f64) -> f64 {
        let px = if (px - px.round()).abs() < 1e-4 { px.round() } else { px };
        let py = if (py - py.round()).abs() < 1e-4 { py.round() } else { py };
        let x0 = px.floor();
        let y0 = py.floor();
        let (wx, wy) = (px - x0, py - y0);
        let fetch = |yy: f64, xx: f64| -> f64 {
            if yy >= 0.0 && xx >= 0.0 && (yy as usize) < self.height && (xx as usize) < self.width {
                self.at(c, yy as usize, xx as usize) as f64
            } else {
                0.0
            }
        };
        fetch(y0, x0) * (1.0 - wy) * (1.0 - wx)
            + fetch(y0, x0 + 1.0) * (1.0 - wy) * wx
            + fetch(y0 + 1.0, x0) * wy * (1.0 - wx)
            + fetch(y0 + 1.0, x0 + 1.0) * wy * wx
    }

    pub fn to_tensor(&self) -> TensorData {
        TensorData::new(vec![1, 3, self.height, self.width], self.data.clone())
    }
}

/// Multi-scale colored noise, a few random polygons, and (half the time) a
/// blended checkerboard; finished with one box blur so double interpolation
/// during warping stays photometrically consistent.
pub fn generate_base<R: Rng>(rng: &mut R, width: usize, height: usize) -> ImageBuf {
    let mut img = ImageBuf::zeros(width, height);
    // value noise octaves, coarse to fine
    for (cell, amp) in [(width / 4, 0.5), (width / 8, 0.25), (width / 16, 0.15)] {
        let cell = cell.max(2);
        let (gw, gh) = (width / cell + 2, height / cell + 2);
        for c in 0..3 {
            let grid: Vec<f32> = (0..gw * gh).map(|_| rng.gen_range(0.0..1.0)).collect();
            for i in 0..height {
                for j in 0..width {
                    let gy = i as f64 / cell as f64;
                    let gx = j as f64 / cell as f64;
                    let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
                    let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
                    let g = |y: usize, x: usize| grid[y.min(gh - 1) * gw + x.min(gw - 1)] as f64;
                    let v = g(y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + g(y0, x0 + 1) * (1.0 - fy) * fx
                        + g(y0 + 1, x0) * fy * (1.0 - fx)
                        + g(y0 + 1, x0 + 1) * fy * fx;
                    let old = img.at(c, i, j);
                    img.set(c, i, j, old + (amp * v) as f32);
                }
            }
        }
    }
    // random triangles
    let n_polys = rng.gen_range(3..7);
    for _ in 0..n_polys {
        let pts: Vec<[f64; 2]> = (0..3)
            .map(|_| [rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64)])
            .collect();
        let color = [rng.gen_range(0.0..1.0f32), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let alpha = rng.gen_range(0.4..0.9f32);
        fill_triangle(&mut img, &pts, color, alpha);
    }
    // checkerboard overlay
    if rng.gen_bool(0.5) {
        let cell = rng.gen_range(6..13usize);
        let c1 = [rng.gen_range(0.0..1.0f32), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let c2 = [rng.gen_range(0.0..1.0f32), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let alpha = 0.35f32;
        for i in 0..height {
            for j in 0..width {
                let col = if (i / cell + j / cell) % 2 == 0 { c1 } else { c2 };
                for c in 0..3 {
                    let old = img.at(c, i, j);
                    img.set(c, i, j, old * (1.0 - alpha) + col[c] * alpha);
                }
            }
        }
    }
    clamp01(&mut img);
    box_blur3(&img)
}

/// Deterministic checkerboard base for tests.
pub fn checkerboard(width: usize, height: usize, cell: usize) -> ImageBuf {
    let mut img = ImageBuf::zeros(width, height);
    for i in 0..height {
        for j in 0..width {
            let v = if (i / cell + j / cell) % 2 == 0 { 0.9 } else { 0.1 };
            for c in 0..3 {
                img.set(c, i, j, v);
            }
        }
    }
    box_blur3(&img)
}

fn fill_triangle(img: &mut ImageBuf, pts: &[[f64; 2]], color: [f32; 3], alpha: f32) {
    let edge = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    for i in 0..img.height {
        for j in 0..img.width {
            let p = [j as f64 + 0.5, i as f64 + 0.5];
            let d0 = edge(pts[0], pts[1], p);
            let d1 = edge(pts[1], pts[2], p);
            let d2 = edge(pts[2], pts[0], p);
            let inside = (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0);
            if inside {
                for c in 0..3 {
                    let old = img.at(c, i, j);
                    img.set(c, i, j, old * (1.0 - alpha) + color[c] * alpha);
                }
            }
        }
    }
}

fn clamp01(img: &mut ImageBuf) {
    for v in &mut img.data {
        *v = v.clamp(0.0, 1.0);
    }
}

fn box_blur3(img: &ImageBuf) -> ImageBuf {
    let mut out = ImageBuf::zeros(img.width, img.height);
    let (w, h) = (img.width as isize, img.height as isize);
    for c in 0..3 {
        for i in 0..img.height {
            for j in 0..img.width {
                let mut acc = 0.0f64;
                let mut cnt = 0.0f64;
                for di in -1..=1isize {
                    for dj in -1..=1isize {
                        let (y, x) = (i as isize + di, j as isize + dj);
                        if y >= 0 && y < h && x >= 0 && x < w {
                            acc += img.at(c, y as usize, x as usize) as f64;
                            cnt += 1.0;
                        }
                    }
                }
                out.set(c, i, j, (acc / cnt) as f32);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub source: ImageBuf,
    pub target: ImageBuf,
    pub gt_map: CorrespondenceMap,
    pub gt_mask: MatchabilityMask,
    pub transform: GeometricTransform,
}

/// Fraction of the mask that must stay valid for a pair to be accepted.
pub const MIN_MASK_COVERAGE: f64 = 0.2;

/// Build a pair from a base image: the target is the central crop, the
/// source backward-warps the base through the inverse transform, so that
/// sampling the source at the ground-truth map reconstructs the target.
pub fn render_pair(
    base: &ImageBuf,
    t: &GeometricTransform,
    width: usize,
    height: usize,
) -> Result<TrainingPair, RenderError> {
    if base.width < width || base.height < height {
        return Err(RenderError::BaseTooSmall { bw: base.width, bh: base.height, w: width, h: height });
    }
    let (gt_map, gt_mask) = gt_correspondence_map(t, width, height)?;
    let coverage = gt_mask.coverage();
    if coverage < MIN_MASK_COVERAGE {
        return Err(RenderError::ExcessiveMaskLoss { invalid_frac: (1.0 - coverage) * 100.0 });
    }
    let off_x = (base.width - width) / 2;
    let off_y = (base.height - height) / 2;
    let mut target = ImageBuf::zeros(width, height);
    for c in 0..3 {
        for i in 0..height {
            for j in 0..width {
                target.set(c, i, j, base.at(c, i + off_y, j + off_x));
            }
        }
    }
    let mut source = ImageBuf::zeros(width, height);
    for i in 0..height {
        for j in 0..width {
            let p = [pixel_center_norm(j, width) as f64, pixel_center_norm(i, height) as f64];
            let q = t.inverse_point(p)?;
            let px = off_x as f64 + (q[0] + 1.0) * 0.5 * (width as f64 - 1.0);
            let py = off_y as f64 + (q[1] + 1.0) * 0.5 * (height as f64 - 1.0);
            for c in 0..3 {
                source.set(c, i, j, base.sample(c, py, px) as f32);
            }
        }
    }
    Ok(TrainingPair { source, target, gt_map, gt_mask, transform: t.clone() })
}

/// Additive Gaussian pixel noise, clamped back to [0,1].
pub fn add_noise<R: Rng>(img: &mut ImageBuf, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let dist = Normal::new(0.0, sigma).expect("sigma validated");
    for v in &mut img.data {
        *v = (*v as f64 + dist.sample(rng)).clamp(0.0, 1.0) as f32;
    }
}
