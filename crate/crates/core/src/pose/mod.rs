//! Relative camera pose from dense correspondences: match extraction,
//! RANSAC essential-matrix estimation with the normalized 8-point solver,
//! cheirality-tested pose recovery, angular pose errors, and the symmetric
//! epipolar line distance.
//!
//! View naming follows the correspondence map: view A is the image the map
//! grid indexes, view B is the image the map values point into. Recovered
//! motion (R, t) satisfies X_b = R * X_a + t with t returned unit-norm.

mod essential;
pub mod scene;

pub use essential::{
    estimate_essential_ransac, pose_errors, recover_pose, symmetric_epipolar_error, EpipolarSummary, RansacParams,
};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{CorrespondenceMap, MatchabilityMask};

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("fewer than {needed} matches survive filtering ({got})")]
    TooFewMatches { needed: usize, got: usize },
    #[error("no RANSAC model reached {needed} inliers")]
    NoModel { needed: usize },
    #[error("cheirality test is degenerate (no decomposition dominates)")]
    CheiralityTie,
    #[error("invalid camera intrinsics")]
    BadIntrinsics,
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Pinhole intrinsics with zero skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    /// Default synthetic camera: focal = image width, principal point at
    /// the pixel-center midpoint.
    pub fn default_for(width: usize, height: usize) -> Self {
        CameraModel {
            fx: width as f64,
            fy: width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn normalize(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.cx) / self.fx, (p[1] - self.cy) / self.fy]
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        if self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite() {
            Ok(())
        } else {
            Err(PoseError::BadIntrinsics)
        }
    }
}

/// Pixel-coordinate matches between the two views.
#[derive(Debug, Clone, Default)]
pub struct MatchSet {
    pub a: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    pub confidence: Option<Vec<f64>>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

pub const MIN_MATCHES: usize = 8;

/// Confidence source for match filtering.
pub enum Confidence<'a> {
    None,
    Mask(&'a MatchabilityMask),
    Probability(&'a [f32]),
}

/// Sample the map on a pixel stride, keep entries whose confidence reaches
/// the threshold and whose mapped coordinate stays inside [-1,1]², and
/// convert both ends to pixels (align-corners).
pub fn matches_from_map(
    map: &CorrespondenceMap,
    conf: Confidence<'_>,
    threshold: f64,
    stride: usize,
) -> Result<MatchSet, PoseError> {
    if stride == 0 {
        return Err(PoseError::InvalidArg("stride must be >= 1".into()));
    }
    let (w, h) = (map.width, map.height);
    let (sx, sy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut ms = MatchSet::default();
    for i in (0..h).step_by(stride) {
        for j in (0..w).step_by(stride) {
            let c = match conf {
                Confidence::None => 1.0,
                Confidence::Mask(m) => {
                    debug_assert_eq!((m.width, m.height), (w, h));
                    f64::from(u8::from(m.data[i * w + j]))
                }
                Confidence::Probability(p) => p[i * w + j] as f64,
            };
            if c < threshold {
                continue;
            }
            let q = map.at(i, j);
            if q[0].abs() > 1.0 || q[1].abs() > 1.0 {
                continue;
            }
            ms.a.push([j as f64, i as f64]);
            ms.b.push([(q[0] + 1.0) * sx, (q[1] + 1.0) * sy]);
            ms.confidence.get_or_insert_with(Vec::new).push(c);
        }
    }
    if ms.len() < MIN_MATCHES {
        return Err(PoseError::TooFewMatches { needed: MIN_MATCHES, got: ms.len() });
    }
    Ok(ms)
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t[2], t[1], t[2], 0.0, -t[0], -t[1], t[0], 0.0)
}

#[cfg(test)]
mod tests;
