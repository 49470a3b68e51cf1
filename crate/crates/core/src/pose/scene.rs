//! Synthetic two-view scenes with exactly known relative pose.
//!
//! Each scene is a camera motion (R, t, K) observing two textured planes at
//! different depths, split across the image. Every image region is governed
//! by the plane-induced pixel homography G_i = K (R + t n_i^T / d_i) K^-1,
//! so the dense correspondence map is exact and the motion is recoverable:
//! a single plane would leave the 8-point system rank-deficient.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::{CameraModel, MatchSet};
use crate::geometry::synth::ImageBuf;
use crate::geometry::{CorrespondenceMap, MatchabilityMask};
use crate::tensor::pixel_center_norm;

#[derive(Debug, Clone)]
pub struct PoseScene {
    pub camera: CameraModel,
    /// Motion from the map-grid view (A) to the map-value view (B).
    pub rotation: Matrix3<f64>,
    /// Unit-norm translation direction.
    pub translation: Vector3<f64>,
    pub map: CorrespondenceMap,
    pub mask: MatchabilityMask,
    /// Per-pixel plane index (0 or 1) over the A grid.
    pub region: Vec<u8>,
    planes: [(Vector3<f64>, f64); 2],
    /// Raw translation with the scale used against the plane depths.
    t_raw: Vector3<f64>,
    split_u: f64,
}

fn rotation_about(axis: &Vector3<f64>, angle_rad: f64) -> Matrix3<f64> {
    let k = super::skew(&axis.normalize());
    Matrix3::identity() + k * angle_rad.sin() + k * k * (1.0 - angle_rad.cos())
}

fn pixel_homography(k: &Matrix3<f64>, r: &Matrix3<f64>, t: &Vector3<f64>, n: &Vector3<f64>, d: f64) -> Matrix3<f64> {
    k * (r + t * n.transpose() / d) * k.try_inverse().expect("intrinsics invertible")
}

/// Draw scenes until both planes contribute enough valid correspondences.
pub fn sample_pose_scene<R: Rng>(rng: &mut R, width: usize, height: usize) -> PoseScene {
    loop {
        let camera = CameraModel::default_for(width, height);
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let axis = if axis.norm() < 1e-6 { Vector3::new(0.0, 0.0, 1.0) } else { axis };
        let angle = rng.gen_range(2.0f64..8.0).to_radians();
        let rotation = rotation_about(&axis, angle);
        let tdir = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.5..0.5),
        );
        let tdir = if tdir.norm() < 1e-6 { Vector3::new(1.0, 0.0, 0.0) } else { tdir.normalize() };
        let t_raw = tdir * rng.gen_range(0.25..0.7);
        let planes = [
            (
                Vector3::new(rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25), 1.0).normalize(),
                rng.gen_range(3.5..5.0),
            ),
            (
                Vector3::new(rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25), 1.0).normalize(),
                rng.gen_range(6.5..9.0),
            ),
        ];
        let split_u = rng.gen_range(-0.25..0.25);
        if let Some(scene) = build_scene(camera, rotation, t_raw, planes, split_u, width, height) {
            return scene;
        }
    }
}

fn build_scene(
    camera: CameraModel,
    rotation: Matrix3<f64>,
    t_raw: Vector3<f64>,
    planes: [(Vector3<f64>, f64); 2],
    split_u: f64,
    width: usize,
    height: usize,
) -> Option<PoseScene> {
    let k = camera.matrix();
    let k_inv = k.try_inverse()?;
    let gs = [
        pixel_homography(&k, &rotation, &t_raw, &planes[0].0, planes[0].1),
        pixel_homography(&k, &rotation, &t_raw, &planes[1].0, planes[1].1),
    ];
    let mut map = CorrespondenceMap { width, height, data: vec![0.0; width * height * 2] };
    let mut mask = MatchabilityMask { width, height, data: vec![false; width * height] };
    let mut region = vec![0u8; width * height];
    let (sx, sy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let mut per_region_valid = [0usize; 2];
    for i in 0..height {
        for j in 0..width {
            let u = pixel_center_norm(j, width) as f64;
            let reg = usize::from(u >= split_u);
            region[i * width + j] = reg as u8;
            let p = Vector3::new(j as f64, i as f64, 1.0);
            // depth in view A must be positive for the plane to be seen
            let ray = k_inv * p;
            let (n, d) = planes[reg];
            let denom = n.dot(&ray);
            if denom <= 1e-9 {
                continue;
            }
            let depth_a = d / denom;
            let q = gs[reg] * p;
            if q[2].abs() < 1e-12 {
                continue;
            }
            let qp = [q[0] / q[2], q[1] / q[2]];
            let qn = [((qp[0] / sx) - 1.0) as f32 as f64, ((qp[1] / sy) - 1.0) as f32 as f64];
            map.set(i, j, qn);
            let x_a = ray * depth_a;
            let depth_b = (rotation * x_a + t_raw)[2];
            mask.data[i * width + j] = depth_b > 0.0 && qn[0].abs() <= 1.0 && qn[1].abs() <= 1.0;
            if mask.data[i * width + j] {
                per_region_valid[reg] += 1;
            }
        }
    }
    let valid = mask.valid_count();
    if (valid as f64) < 0.5 * (width * height) as f64 {
        return None;
    }
    if per_region_valid.iter().any(|c| (*c as f64) < 0.2 * valid as f64) {
        return None;
    }
    Some(PoseScene {
        camera,
        rotation,
        translation: t_raw.normalize(),
        map,
        mask,
        region,
        planes,
        t_raw,
        split_u,
    })
}

impl PoseScene {
    /// Render the image pair from a base texture: the target (view A) is
    /// the central crop, the source (view B) backward-warps it through the
    /// piecewise-inverse homography, nearer plane winning where both claim
    /// a pixel.
    pub fn render(&self, base: &ImageBuf) -> (ImageBuf, ImageBuf) {
        let (w, h) = (self.map.width, self.map.height);
        let off_x = (base.width - w) / 2;
        let off_y = (base.height - h) / 2;
        let mut target = ImageBuf::zeros(w, h);
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    target.set(c, i, j, base.at(c, i + off_y, j + off_x));
                }
            }
        }
        let k = self.camera.matrix();
        let k_inv = k.try_inverse().expect("intrinsics invertible");
        let gs = [
            pixel_homography(&k, &self.rotation, &self.t_raw, &self.planes[0].0, self.planes[0].1),
            pixel_homography(&k, &self.rotation, &self.t_raw, &self.planes[1].0, self.planes[1].1),
        ];
        let gs_inv = [gs[0].try_inverse(), gs[1].try_inverse()];
        let mut source = ImageBuf::zeros(w, h);
        for i in 0..h {
            for j in 0..w {
                let q = Vector3::new(j as f64, i as f64, 1.0);
                // candidate preimages on each plane, occlusion by view-B depth
                let mut best: Option<(f64, [f64; 2])> = None;
                for reg in 0..2 {
                    let Some(ginv) = &gs_inv[reg] else { continue };
                    let x = ginv * q;
                    if x[2].abs() < 1e-12 {
                        continue;
                    }
                    let xp = [x[0] / x[2], x[1] / x[2]];
                    let u_norm = xp[0] / ((w as f64 - 1.0) / 2.0) - 1.0;
                    let in_region = usize::from(u_norm >= self.split_u) == reg;
                    if !in_region {
                        continue;
                    }
                    let ray = k_inv * Vector3::new(xp[0], xp[1], 1.0);
                    let (n, d) = self.planes[reg];
                    let denom = n.dot(&ray);
                    if denom <= 1e-9 {
                        continue;
                    }
                    let x_a = ray * (d / denom);
                    let depth_b = (self.rotation * x_a + self.t_raw)[2];
                    if depth_b <= 0.0 {
                        continue;
                    }
                    if best.map_or(true, |(bd, _)| depth_b < bd) {
                        best = Some((depth_b, xp));
                    }
                }
                if let Some((_, xp)) = best {
                    for c in 0..3 {
                        let v = base.sample(c, off_y as f64 + xp[1], off_x as f64 + xp[0]);
                        source.set(c, i, j, v as f32);
                    }
                }
            }
        }
        (source, target)
    }
}

/// Replace the mapped end of a seeded fraction of matches with uniform
/// in-bounds pixels, for robustness experiments.
pub fn inject_outliers<R: Rng>(ms: &mut MatchSet, fraction: f64, width: usize, height: usize, rng: &mut R) {
    let n = ms.len();
    let n_out = (n as f64 * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..n_out.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
        let pick = idx[i];
        ms.b[pick] = [
            rng.gen_range(0.0..(width as f64 - 1.0)),
            rng.gen_range(0.0..(height as f64 - 1.0)),
        ];
    }
}

// ── Pose sidecar files ───────────────────────────────────────────────

/// Text sidecar recording the exact ground-truth motion of a pose pair.
pub fn write_pose_file(path: &Path, scene: &PoseScene) -> io::Result<()> {
    let mut out = String::new();
    let c = &scene.camera;
    out.push_str(&format!("K {:.17e} {:.17e} {:.17e} {:.17e}\n", c.fx, c.fy, c.cx, c.cy));
    out.push_str("R");
    for i in 0..3 {
        for j in 0..3 {
            out.push_str(&format!(" {:.17e}", scene.rotation[(i, j)]));
        }
    }
    out.push('\n');
    out.push_str(&format!(
        "t {:.17e} {:.17e} {:.17e}\n",
        scene.translation[0], scene.translation[1], scene.translation[2]
    ));
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())
}

pub struct PoseGroundTruth {
    pub camera: CameraModel,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

pub fn read_pose_file(path: &Path) -> io::Result<PoseGroundTruth> {
    let text = fs::read_to_string(path)?;
    let bad = || io::Error::new(io::ErrorKind::InvalidData, format!("malformed pose file {}", path.display()));
    let mut camera = None;
    let mut rotation = None;
    let mut translation = None;
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("K") => {
                let v: Vec<f64> = it.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
                if v.len() != 4 {
                    return Err(bad());
                }
                camera = Some(CameraModel { fx: v[0], fy: v[1], cx: v[2], cy: v[3] });
            }
            Some("R") => {
                let v: Vec<f64> = it.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
                if v.len() != 9 {
                    return Err(bad());
                }
                rotation = Some(Matrix3::from_row_slice(&v));
            }
            Some("t") => {
                let v: Vec<f64> = it.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
                if v.len() != 3 {
                    return Err(bad());
                }
                translation = Some(Vector3::new(v[0], v[1], v[2]));
            }
            _ => {}
        }
    }
    match (camera, rotation, translation) {
        (Some(camera), Some(rotation), Some(translation)) => Ok(PoseGroundTruth { camera, rotation, translation }),
        _ => Err(bad()),
    }
}
