//! Normalized 8-point solver, RANSAC loop, pose recovery, and epipolar
//! distance metrics.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{skew, CameraModel, MatchSet, PoseError, MIN_MATCHES};
use crate::geometry::smallest_right_singular;

/// Hartley conditioning: translate the centroid to the origin and scale the
/// mean distance to sqrt(2).
fn hartley_normalize(pts: &[[f64; 2]]) -> (Vec<[f64; 2]>, Matrix3<f64>) {
    let n = pts.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in pts {
        cx += p[0];
        cy += p[1];
    }
    cx /= n;
    cy /= n;
    let mut dist = 0.0;
    for p in pts {
        dist += (p[0] - cx).hypot(p[1] - cy);
    }
    dist /= n;
    let s = if dist > 1e-12 { 2.0f64.sqrt() / dist } else { 1.0 };
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let out = pts.iter().map(|p| [s * (p[0] - cx), s * (p[1] - cy)]).collect();
    (out, t)
}

/// Least-squares fundamental/essential system on >= 8 correspondences.
/// Returns None when the stacked system is rank-deficient (degenerate
/// sample). The result satisfies xb' * F * xa ~ 0, unconstrained rank.
fn eight_point_linear(xa: &[[f64; 2]], xb: &[[f64; 2]]) -> Option<Matrix3<f64>> {
    let (na, ta) = hartley_normalize(xa);
    let (nb, tb) = hartley_normalize(xb);
    let n = na.len();
    let mut a = DMatrix::<f64>::zeros(n.max(9), 9);
    for i in 0..n {
        let (x1, y1) = (na[i][0], na[i][1]);
        let (x2, y2) = (nb[i][0], nb[i][1]);
        a[(i, 0)] = x2 * x1;
        a[(i, 1)] = x2 * y1;
        a[(i, 2)] = x2;
        a[(i, 3)] = y2 * x1;
        a[(i, 4)] = y2 * y1;
        a[(i, 5)] = y2;
        a[(i, 6)] = x1;
        a[(i, 7)] = y1;
        a[(i, 8)] = 1.0;
    }
    // rank check: with 8 points the null space must be exactly 1-dim
    let svals = a.clone().svd(false, false).singular_values;
    let mut sv: Vec<f64> = svals.iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    if n == 8 && sv[7] < 1e-10 * sv[0].max(1e-300) {
        return None;
    }
    let f = smallest_right_singular(&a)?;
    let fm = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    Some(tb.transpose() * fm * ta)
}

/// Project onto the essential manifold: singular values (s, s, 0) with s
/// the mean of the two largest.
pub fn essential_projection(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let s = (svd.singular_values[0] + svd.singular_values[1]) / 2.0;
    u * Matrix3::from_diagonal(&Vector3::new(s, s, 0.0)) * vt
}

/// Point-to-line distance for a homogeneous line (a, b, c); None when the
/// line is degenerate (a = b = 0).
fn line_distance(p: [f64; 2], l: &Vector3<f64>) -> Option<f64> {
    let norm = l[0].hypot(l[1]);
    if norm < 1e-300 {
        return None;
    }
    Some((l[0] * p[0] + l[1] * p[1] + l[2]).abs() / norm)
}

/// Per-match symmetric epipolar distance
/// sqrt((d^2(xb, F xa) + d^2(xa, F' xb)) / 2); degenerate lines yield +inf.
pub fn epipolar_distances(ms: &MatchSet, fmat: &Matrix3<f64>) -> Vec<f64> {
    ms.a.iter()
        .zip(&ms.b)
        .map(|(pa, pb)| {
            let xa = Vector3::new(pa[0], pa[1], 1.0);
            let xb = Vector3::new(pb[0], pb[1], 1.0);
            let la = fmat * xa; // line in image B
            let lb = fmat.transpose() * xb; // line in image A
            match (line_distance(*pb, &la), line_distance(*pa, &lb)) {
                (Some(da), Some(db)) => ((da * da + db * db) / 2.0).sqrt(),
                _ => f64::INFINITY,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EpipolarSummary {
    /// Median over finite distances; +inf when none are finite.
    pub median: f64,
    /// (threshold_px, fraction of matches at or below threshold) rows.
    pub cumulative: Vec<(f64, f64)>,
}

/// Distances plus a Fig-3c style normalized cumulative histogram.
pub fn symmetric_epipolar_error(ms: &MatchSet, fmat: &Matrix3<f64>) -> (Vec<f64>, EpipolarSummary) {
    let d = epipolar_distances(ms, fmat);
    let mut finite: Vec<f64> = d.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if finite.is_empty() {
        f64::INFINITY
    } else {
        let mid = finite.len() / 2;
        if finite.len() % 2 == 1 {
            finite[mid]
        } else {
            (finite[mid - 1] + finite[mid]) / 2.0
        }
    };
    let total = d.len() as f64;
    let cumulative = (0..=40)
        .map(|k| {
            let t = k as f64 * 0.25;
            let frac = d.iter().filter(|v| **v <= t).count() as f64 / total;
            (t, frac)
        })
        .collect();
    (d, EpipolarSummary { median, cumulative })
}

#[derive(Debug, Clone, Copy)]
pub struct RansacParams {
    pub iters: usize,
    pub restarts: usize,
    pub inlier_thresh_px: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams { iters: 1000, restarts: 5, inlier_thresh_px: 1.0, seed: 0 }
    }
}

pub struct RansacResult {
    pub essential: Matrix3<f64>,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub mean_inlier_residual: f64,
}

/// RANSAC over 8-point minimal samples on K-normalized coordinates.
/// Inliers are counted with the symmetric epipolar distance in pixel units
/// (F = Kb^-T E Ka^-1). The winner is the model with the most inliers,
/// ties broken by lower mean inlier residual, then by earlier discovery;
/// the returned essential matrix is refit on the winner's inlier set.
pub fn estimate_essential_ransac(
    ms: &MatchSet,
    ka: &CameraModel,
    kb: &CameraModel,
    params: &RansacParams,
) -> Result<RansacResult, PoseError> {
    ka.validate()?;
    kb.validate()?;
    if ms.len() < MIN_MATCHES {
        return Err(PoseError::TooFewMatches { needed: MIN_MATCHES, got: ms.len() });
    }
    let na: Vec<[f64; 2]> = ms.a.iter().map(|p| ka.normalize(*p)).collect();
    let nb: Vec<[f64; 2]> = ms.b.iter().map(|p| kb.normalize(*p)).collect();
    let ka_inv = ka.matrix().try_inverse().ok_or(PoseError::BadIntrinsics)?;
    let kb_inv_t = kb.matrix().try_inverse().ok_or(PoseError::BadIntrinsics)?.transpose();

    let mut best: Option<(usize, f64, Matrix3<f64>, Vec<bool>)> = None;
    for restart in 0..params.restarts {
        let mut rng =
            ChaCha8Rng::seed_from_u64(params.seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in 0..params.iters {
            let idx = index_sample(&mut rng, ms.len(), MIN_MATCHES);
            let sa: Vec<[f64; 2]> = idx.iter().map(|i| na[i]).collect();
            let sb: Vec<[f64; 2]> = idx.iter().map(|i| nb[i]).collect();
            let Some(lin) = eight_point_linear(&sa, &sb) else { continue };
            let e = essential_projection(&lin);
            let f = kb_inv_t * e * ka_inv;
            let d = epipolar_distances(ms, &f);
            let mut count = 0usize;
            let mut residual = 0.0f64;
            let mut mask = vec![false; ms.len()];
            for (i, di) in d.iter().enumerate() {
                if *di < params.inlier_thresh_px {
                    count += 1;
                    residual += di;
                    mask[i] = true;
                }
            }
            if count == 0 {
                continue;
            }
            let mean_res = residual / count as f64;
            let better = match &best {
                None => true,
                Some((bc, br, _, _)) => count > *bc || (count == *bc && mean_res < *br),
            };
            if better {
                best = Some((count, mean_res, e, mask));
            }
        }
    }
    let (count, mean_res, e_win, mask) = best.ok_or(PoseError::NoModel { needed: MIN_MATCHES })?;
    if count < MIN_MATCHES {
        return Err(PoseError::NoModel { needed: MIN_MATCHES });
    }
    // refit on every inlier of the winning model
    let ia: Vec<[f64; 2]> = mask.iter().zip(&na).filter(|(m, _)| **m).map(|(_, p)| *p).collect();
    let ib: Vec<[f64; 2]> = mask.iter().zip(&nb).filter(|(m, _)| **m).map(|(_, p)| *p).collect();
    let refit = eight_point_linear(&ia, &ib).map(|lin| essential_projection(&lin)).unwrap_or(e_win);
    Ok(RansacResult { essential: refit, inliers: mask, inlier_count: count, mean_inlier_residual: mean_res })
}

/// Midpoint triangulation depth signs for one candidate decomposition.
fn positive_depth_count(r: &Matrix3<f64>, t: &Vector3<f64>, na: &[[f64; 2]], nb: &[[f64; 2]]) -> usize {
    let rt = r.transpose();
    let o2 = -rt * t;
    let mut count = 0;
    for (pa, pb) in na.iter().zip(nb) {
        let d1 = Vector3::new(pa[0], pa[1], 1.0).normalize();
        let d2 = rt * Vector3::new(pb[0], pb[1], 1.0).normalize();
        let a11 = d1.dot(&d1);
        let a12 = -d1.dot(&d2);
        let a21 = d1.dot(&d2);
        let a22 = -d2.dot(&d2);
        let det = a11 * a22 - a12 * a21;
        if det.abs() < 1e-15 {
            continue;
        }
        let b1 = d1.dot(&o2);
        let b2 = d2.dot(&o2);
        let s = (b1 * a22 - a12 * b2) / det;
        let u = (a11 * b2 - b1 * a21) / det;
        let p = (s * d1 + o2 + u * d2) / 2.0;
        let z1 = p[2];
        let z2 = (r * p + t)[2];
        if z1 > 0.0 && z2 > 0.0 {
            count += 1;
        }
    }
    count
}

/// The four decompositions of E tested by midpoint triangulation; the one
/// with strictly the most positive-depth points wins. Matches are pixel
/// coordinates, normalized internally.
pub fn recover_pose(
    e: &Matrix3<f64>,
    ms: &MatchSet,
    ka: &CameraModel,
    kb: &CameraModel,
) -> Result<(Matrix3<f64>, Vector3<f64>), PoseError> {
    ka.validate()?;
    kb.validate()?;
    let na: Vec<[f64; 2]> = ms.a.iter().map(|p| ka.normalize(*p)).collect();
    let nb: Vec<[f64; 2]> = ms.b.iter().map(|p| kb.normalize(*p)).collect();
    let svd = e.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut vt = svd.v_t.unwrap();
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    let tvec: Vector3<f64> = u.column(2).into();
    let candidates = [
        (r1, tvec),
        (r1, -tvec),
        (r2, tvec),
        (r2, -tvec),
    ];
    let counts: Vec<usize> = candidates
        .iter()
        .map(|(r, t)| positive_depth_count(r, t, &na, &nb))
        .collect();
    let best = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
    let ties = counts.iter().filter(|c| **c == counts[best]).count();
    if ties > 1 || counts[best] == 0 {
        return Err(PoseError::CheiralityTie);
    }
    let (r, t) = candidates[best];
    Ok((r, t.normalize()))
}

/// Angular pose errors in degrees: orientation from the relative rotation
/// trace, translation from the absolute cosine (sign and scale are
/// unobservable).
pub fn pose_errors(
    r_est: &Matrix3<f64>,
    t_est: &Vector3<f64>,
    r_gt: &Matrix3<f64>,
    t_gt: &Vector3<f64>,
) -> (f64, f64) {
    let cos_r = (((r_est.transpose() * r_gt).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let rot_err = cos_r.acos().to_degrees();
    let cos_t = (t_est.normalize().dot(&t_gt.normalize())).abs().clamp(0.0, 1.0);
    let trans_err = cos_t.acos().to_degrees();
    (rot_err, trans_err)
}

/// Fundamental matrix in pixel units from an essential matrix.
pub fn fundamental_from_essential(e: &Matrix3<f64>, ka: &CameraModel, kb: &CameraModel) -> Matrix3<f64> {
    let ka_inv = ka.matrix().try_inverse().expect("validated intrinsics");
    let kb_inv_t = kb.matrix().try_inverse().expect("validated intrinsics").transpose();
    kb_inv_t * e * ka_inv
}

/// Ground-truth essential matrix for a known motion.
pub fn essential_from_pose(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
    skew(t) * r
}
