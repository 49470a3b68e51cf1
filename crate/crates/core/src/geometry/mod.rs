//! Exact geometric transformations over normalized [-1,1]² coordinates:
//! affine maps, homographies (4-point DLT), and thin-plate splines, plus
//! random sampling for synthetic pair generation.

mod map;
pub mod synth;
pub mod io;

pub use map::{
    downsample_map_mask, flow_to_map, gt_correspondence_map, map_from_tensor, map_to_flow, map_to_tensor,
    CorrespondenceMap, FlowMap, MatchabilityMask,
};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point maps to infinity (homogeneous w ~ 0)")]
    PointAtInfinity,
    #[error("control points are collinear; TPS system is singular")]
    CollinearControlPoints,
    #[error("singular linear system in transform fitting")]
    SingularSystem,
    #[error("need at least {needed} control points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate transform (non-invertible)")]
    Degenerate,
    #[error("inverse iteration failed to converge")]
    InverseDiverged,
}

pub type Point = [f64; 2];

/// 2x3 affine matrix acting on column vectors: q = M * [x, y, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Affine2 {
    pub m: [f64; 6],
}

impl Affine2 {
    pub fn identity() -> Self {
        Affine2 { m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0] }
    }

    pub fn apply(&self, p: Point) -> Point {
        let [a, b, c, d, e, f] = self.m;
        [a * p[0] + b * p[1] + c, d * p[0] + e * p[1] + f]
    }

    pub fn det(&self) -> f64 {
        self.m[0] * self.m[4] - self.m[1] * self.m[3]
    }

    pub fn inverse(&self) -> Result<Affine2, GeometryError> {
        let det = self.det();
        if det.abs() < 1e-12 {
            return Err(GeometryError::Degenerate);
        }
        let [a, b, c, d, e, f] = self.m;
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(Affine2 { m: [ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)] })
    }
}

/// Thin-plate spline with kernel U(r) = r^2 ln r, U(0) = 0. Weights obey
/// the side conditions sum(w) = 0 and sum(w * ctrl) = 0 per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinPlateSpline {
    pub ctrl: Vec<Point>,
    /// Per-output-coordinate affine part [a0, ax, ay].
    pub affine: [[f64; 3]; 2],
    /// Per-output-coordinate kernel weights, one per control point.
    pub weights: [Vec<f64>; 2],
}

fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln() // r^2 ln r = (r^2 ln r^2) / 2
    }
}

impl ThinPlateSpline {
    pub fn identity(ctrl: Vec<Point>) -> Self {
        let n = ctrl.len();
        ThinPlateSpline {
            ctrl,
            affine: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            weights: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let mut out = [0.0; 2];
        for axis in 0..2 {
            let a = &self.affine[axis];
            let mut v = a[0] + a[1] * p[0] + a[2] * p[1];
            for (c, w) in self.ctrl.iter().zip(&self.weights[axis]) {
                let r2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                v += w * tps_kernel(r2);
            }
            out[axis] = v;
        }
        out
    }
}

/// Fit a TPS interpolating `dst` at `src` control points. With `reg` = 0 the
/// interpolation is exact; positive `reg` relaxes it (standard bending
/// regularization added to the kernel diagonal).
pub fn fit_tps(src: &[Point], dst: &[Point], reg: f64) -> Result<ThinPlateSpline, GeometryError> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return Err(GeometryError::TooFewPoints { needed: 3, got: n.min(dst.len()) });
    }
    if collinear(src) {
        return Err(GeometryError::CollinearControlPoints);
    }
    let dim = n + 3;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            let r2 = (src[i][0] - src[j][0]).powi(2) + (src[i][1] - src[j][1]).powi(2);
            a[(i, j)] = tps_kernel(r2) + if i == j { reg } else { 0.0 };
        }
        a[(i, n)] = 1.0;
        a[(i, n + 1)] = src[i][0];
        a[(i, n + 2)] = src[i][1];
        a[(n, i)] = 1.0;
        a[(n + 1, i)] = src[i][0];
        a[(n + 2, i)] = src[i][1];
    }
    let lu = a.lu();
    let mut affine = [[0.0; 3]; 2];
    let mut weights = [vec![0.0; n], vec![0.0; n]];
    for axis in 0..2 {
        let mut b = DVector::<f64>::zeros(dim);
        for i in 0..n {
            b[i] = dst[i][axis];
        }
        let sol = lu.solve(&b).ok_or(GeometryError::SingularSystem)?;
        for i in 0..n {
            weights[axis][i] = sol[i];
        }
        affine[axis] = [sol[n], sol[n + 1], sol[n + 2]];
    }
    Ok(ThinPlateSpline { ctrl: src.to_vec(), affine, weights })
}

fn collinear(pts: &[Point]) -> bool {
    // largest triangle area over point triples against the first two points
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let ax = pts[j][0] - pts[i][0];
                let ay = pts[j][1] - pts[i][1];
                let bx = pts[k][0] - pts[i][0];
                let by = pts[k][1] - pts[i][1];
                if (ax * by - ay * bx).abs() > 1e-9 {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometricTransform {
    Affine(Affine2),
    /// 3x3 projective matrix, h33 normalized to 1.
    Homography(Matrix3<f64>),
    Tps(ThinPlateSpline),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Affine,
    Tps,
    Homography,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Affine => "affine",
            TransformKind::Tps => "tps",
            TransformKind::Homography => "homo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "affine" | "aff" => Some(TransformKind::Affine),
            "tps" => Some(TransformKind::Tps),
            "homo" | "homography" => Some(TransformKind::Homography),
            _ => None,
        }
    }
}

impl GeometricTransform {
    pub fn identity() -> Self {
        GeometricTransform::Affine(Affine2::identity())
    }

    pub fn kind(&self) -> TransformKind {
        match self {
            GeometricTransform::Affine(_) => TransformKind::Affine,
            GeometricTransform::Homography(_) => TransformKind::Homography,
            GeometricTransform::Tps(_) => TransformKind::Tps,
        }
    }

    pub fn apply(&self, p: Point) -> Result<Point, GeometryError> {
        match self {
            GeometricTransform::Affine(a) => Ok(a.apply(p)),
            GeometricTransform::Homography(h) => {
                let q = h * Vector3::new(p[0], p[1], 1.0);
                if q[2].abs() < 1e-12 {
                    return Err(GeometryError::PointAtInfinity);
                }
                Ok([q[0] / q[2], q[1] / q[2]])
            }
            GeometricTransform::Tps(t) => Ok(t.apply(p)),
        }
    }

    /// Closed-form inverse transform; TPS has none.
    pub fn inverse(&self) -> Result<GeometricTransform, GeometryError> {
        match self {
            GeometricTransform::Affine(a) => Ok(GeometricTransform::Affine(a.inverse()?)),
            GeometricTransform::Homography(h) => {
                let inv = h.try_inverse().ok_or(GeometryError::Degenerate)?;
                Ok(GeometricTransform::Homography(normalize_h(inv)))
            }
            GeometricTransform::Tps(_) => Err(GeometryError::Degenerate),
        }
    }

    /// Preimage of `q`: exact for affine/homography, damped fixed-point
    /// iteration for TPS.
    pub fn inverse_point(&self, q: Point) -> Result<Point, GeometryError> {
        match self {
            GeometricTransform::Affine(_) | GeometricTransform::Homography(_) => self.inverse()?.apply(q),
            GeometricTransform::Tps(t) => {
                let mut x = q;
                let mut best = x;
                let mut best_err = f64::INFINITY;
                for _ in 0..200 {
                    let fx = t.apply(x);
                    let rx = fx[0] - q[0];
                    let ry = fx[1] - q[1];
                    let err = rx.hypot(ry);
                    if err < best_err {
                        best_err = err;
                        best = x;
                    }
                    if err < 1e-12 {
                        return Ok(x);
                    }
                    x = [x[0] - 0.8 * rx, x[1] - 0.8 * ry];
                    if !x[0].is_finite() || !x[1].is_finite() {
                        return Err(GeometryError::InverseDiverged);
                    }
                }
                if best_err < 1e-6 {
                    Ok(best)
                } else {
                    Err(GeometryError::InverseDiverged)
                }
            }
        }
    }

    /// Whether the transform satisfies its invertibility invariant.
    pub fn is_invertible(&self) -> bool {
        match self {
            GeometricTransform::Affine(a) => a.det().abs() > 1e-10,
            GeometricTransform::Homography(h) => h.determinant().abs() > 1e-10,
            GeometricTransform::Tps(_) => true,
        }
    }
}

fn normalize_h(h: Matrix3<f64>) -> Matrix3<f64> {
    if h[(2, 2)].abs() > 1e-12 {
        h / h[(2, 2)]
    } else {
        h
    }
}

/// Right singular vector for the smallest singular value. Rows are padded
/// with zeros up to the column count: nalgebra's thin SVD would otherwise
/// drop exactly the null-space vector we are after.
pub fn smallest_right_singular(a: &DMatrix<f64>) -> Option<DVector<f64>> {
    let cols = a.ncols();
    let padded = if a.nrows() < cols {
        let mut p = DMatrix::<f64>::zeros(cols, cols);
        p.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t?;
    let mut best = 0;
    for i in 1..svd.singular_values.len() {
        if svd.singular_values[i] < svd.singular_values[best] {
            best = i;
        }
    }
    Some(vt.row(best).transpose())
}

/// Homography from exactly four point correspondences via DLT.
pub fn dlt_homography(src: &[Point; 4], dst: &[Point; 4]) -> Result<Matrix3<f64>, GeometryError> {
    let mut a = DMatrix::<f64>::zeros(8, 9);
    for (i, (s, d)) in src.iter().zip(dst.iter()).enumerate() {
        let (x, y) = (s[0], s[1]);
        let (u, v) = (d[0], d[1]);
        let r0 = 2 * i;
        // u row: -x -y -1 0 0 0 ux uy u
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        // v row
        a[(r0 + 1, 3)] = -x;
        a[(r0 + 1, 4)] = -y;
        a[(r0 + 1, 5)] = -1.0;
        a[(r0 + 1, 6)] = v * x;
        a[(r0 + 1, 7)] = v * y;
        a[(r0 + 1, 8)] = v;
    }
    let hvec = smallest_right_singular(&a).ok_or(GeometryError::SingularSystem)?;
    let h = Matrix3::new(
        hvec[0], hvec[1], hvec[2], hvec[3], hvec[4], hvec[5], hvec[6], hvec[7], hvec[8],
    );
    if h[(2, 2)].abs() < 1e-12 {
        return Err(GeometryError::Degenerate);
    }
    Ok(normalize_h(h))
}

/// Compose two transforms as matrices: result maps p through `first`, then
/// `second`. Only affine and homography compose in closed form.
pub fn compose(second: &GeometricTransform, first: &GeometricTransform) -> Option<GeometricTransform> {
    let to_mat = |t: &GeometricTransform| -> Option<Matrix3<f64>> {
        match t {
            GeometricTransform::Affine(a) => {
                let [m0, m1, m2, m3, m4, m5] = a.m;
                Some(Matrix3::new(m0, m1, m2, m3, m4, m5, 0.0, 0.0, 1.0))
            }
            GeometricTransform::Homography(h) => Some(*h),
            GeometricTransform::Tps(_) => None,
        }
    };
    let m = to_mat(second)? * to_mat(first)?;
    Some(GeometricTransform::Homography(normalize_h(m)))
}

/// The default 3x3 TPS control grid on [-1,1]².
pub fn tps_control_grid() -> Vec<Point> {
    let mut pts = Vec::with_capacity(9);
    for y in [-1.0, 0.0, 1.0] {
        for x in [-1.0, 0.0, 1.0] {
            pts.push([x, y]);
        }
    }
    pts
}

/// Draw a random transform of the given kind. `strength` in [0, 0.4] scales
/// every perturbation; 0 short-circuits to the exact identity. Degenerate
/// draws are rejected and resampled.
pub fn sample_transform<R: Rng>(kind: TransformKind, rng: &mut R, strength: f64) -> Result<GeometricTransform, GeometryError> {
    assert!((0.0..=0.4).contains(&strength), "strength must be in [0, 0.4]");
    if strength == 0.0 {
        return Ok(match kind {
            TransformKind::Affine => GeometricTransform::Affine(Affine2::identity()),
            TransformKind::Homography => GeometricTransform::Homography(Matrix3::identity()),
            TransformKind::Tps => GeometricTransform::Tps(ThinPlateSpline::identity(tps_control_grid())),
        });
    }
    for _ in 0..100 {
        let t = match kind {
            TransformKind::Affine => {
                let theta = rng.gen_range(-1.0..1.0) * strength * std::f64::consts::FRAC_PI_4;
                let sx = 1.0 + rng.gen_range(-1.0..1.0) * strength;
                let sy = 1.0 + rng.gen_range(-1.0..1.0) * strength;
                let shear = rng.gen_range(-1.0..1.0) * strength * 0.5;
                let tx = rng.gen_range(-1.0..1.0) * strength;
                let ty = rng.gen_range(-1.0..1.0) * strength;
                // linear part = R(theta) * Shear(k) * Scale(sx, sy)
                let (c, s) = (theta.cos(), theta.sin());
                let m00 = c * sx;
                let m01 = (c * shear - s) * sy;
                let m10 = s * sx;
                let m11 = (s * shear + c) * sy;
                GeometricTransform::Affine(Affine2 { m: [m00, m01, tx, m10, m11, ty] })
            }
            TransformKind::Homography => {
                let corners = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
                let mut dst = corners;
                for d in dst.iter_mut() {
                    d[0] += rng.gen_range(-1.0..1.0) * strength;
                    d[1] += rng.gen_range(-1.0..1.0) * strength;
                }
                match dlt_homography(&corners, &dst) {
                    Ok(h) => GeometricTransform::Homography(h),
                    Err(_) => continue,
                }
            }
            TransformKind::Tps => {
                let src = tps_control_grid();
                let dst: Vec<Point> = src
                    .iter()
                    .map(|p| {
                        [
                            p[0] + rng.gen_range(-1.0..1.0) * strength,
                            p[1] + rng.gen_range(-1.0..1.0) * strength,
                        ]
                    })
                    .collect();
                match fit_tps(&src, &dst, 0.0) {
                    Ok(tps) => GeometricTransform::Tps(tps),
                    Err(_) => continue,
                }
            }
        };
        if t.is_invertible() {
            return Ok(t);
        }
    }
    Err(GeometryError::Degenerate)
}
