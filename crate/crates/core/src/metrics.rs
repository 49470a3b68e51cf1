//! Evaluation metrics: average endpoint error, percentage of correct
//! keypoints at pixel thresholds, and the Jaccard index of matchability
//! masks. Endpoint errors convert normalized units to pixels with the
//! align-corners factors (W-1)/2 and (H-1)/2.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{CorrespondenceMap, MatchabilityMask};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("estimate and ground truth differ in resolution")]
    ResolutionMismatch,
    #[error("no valid pixels under the evaluation mask")]
    EmptyMask,
    #[error("thresholds must be positive")]
    BadThreshold,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub aepe: f64,
    /// threshold (pixels, as integer key of 1000*t) -> fraction correct
    pub pck: BTreeMap<u64, f64>,
    pub jaccard: Option<f64>,
    pub n_valid: usize,
}

impl EvalReport {
    pub fn pck_at(&self, threshold_px: f64) -> Option<f64> {
        self.pck.get(&pck_key(threshold_px)).copied()
    }
}

pub fn pck_key(threshold_px: f64) -> u64 {
    (threshold_px * 1000.0).round() as u64
}

fn endpoint_errors_px(
    est: &CorrespondenceMap,
    gt: &CorrespondenceMap,
    mask: Option<&MatchabilityMask>,
) -> Result<Vec<f64>, MetricsError> {
    if est.width != gt.width || est.height != gt.height {
        return Err(MetricsError::ResolutionMismatch);
    }
    if let Some(m) = mask {
        if m.width != gt.width || m.height != gt.height {
            return Err(MetricsError::ResolutionMismatch);
        }
    }
    let (sx, sy) = ((gt.width as f64 - 1.0) / 2.0, (gt.height as f64 - 1.0) / 2.0);
    let mut errs = Vec::new();
    for i in 0..gt.height {
        for j in 0..gt.width {
            if let Some(m) = mask {
                if !m.data[i * gt.width + j] {
                    continue;
                }
            }
            let e = est.at(i, j);
            let g = gt.at(i, j);
            let du = (e[0] - g[0]) * sx;
            let dv = (e[1] - g[1]) * sy;
            errs.push(du.hypot(dv));
        }
    }
    if errs.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    Ok(errs)
}

/// Mean Euclidean pixel distance over mask-valid pixels (or all pixels when
/// `mask` is None, for full-frame evaluation).
pub fn aepe(
    est: &CorrespondenceMap,
    gt: &CorrespondenceMap,
    mask: Option<&MatchabilityMask>,
) -> Result<f64, MetricsError> {
    let errs = endpoint_errors_px(est, gt, mask)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Fraction of valid pixels with endpoint error <= threshold, per threshold.
pub fn pck(
    est: &CorrespondenceMap,
    gt: &CorrespondenceMap,
    mask: Option<&MatchabilityMask>,
    thresholds_px: &[f64],
) -> Result<BTreeMap<u64, f64>, MetricsError> {
    if thresholds_px.iter().any(|t| *t <= 0.0) {
        return Err(MetricsError::BadThreshold);
    }
    let errs = endpoint_errors_px(est, gt, mask)?;
    let n = errs.len() as f64;
    Ok(thresholds_px
        .iter()
        .map(|t| {
            let correct = errs.iter().filter(|e| **e <= *t).count() as f64;
            (pck_key(*t), correct / n)
        })
        .collect())
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn jaccard(pred: &MatchabilityMask, gt: &MatchabilityMask) -> Result<f64, MetricsError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(MetricsError::ResolutionMismatch);
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (p, g) in pred.data.iter().zip(&gt.data) {
        inter += usize::from(*p && *g);
        union += usize::from(*p || *g);
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Binarize matchability probabilities at 0.5 (strictly greater).
pub fn probs_to_mask(probs: &[f32], width: usize, height: usize) -> MatchabilityMask {
    MatchabilityMask { width, height, data: probs.iter().map(|p| *p > 0.5).collect() }
}

pub const DEFAULT_PCK_THRESHOLDS: [f64; 3] = [1.0, 3.0, 5.0];

pub fn evaluate_pair(
    est: &CorrespondenceMap,
    gt: &CorrespondenceMap,
    mask: Option<&MatchabilityMask>,
    thresholds_px: &[f64],
    pred_mask: Option<&MatchabilityMask>,
    gt_mask_for_jaccard: Option<&MatchabilityMask>,
) -> Result<EvalReport, MetricsError> {
    let errs = endpoint_errors_px(est, gt, mask)?;
    let aepe = errs.iter().sum::<f64>() / errs.len() as f64;
    let pck = pck(est, gt, mask, thresholds_px)?;
    let jaccard_val = match (pred_mask, gt_mask_for_jaccard) {
        (Some(p), Some(g)) => Some(jaccard(p, g)?),
        _ => None,
    };
    Ok(EvalReport { aepe, pck, jaccard: jaccard_val, n_valid: errs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted(gt: &CorrespondenceMap, du_px: f64, on: impl Fn(usize) -> bool) -> CorrespondenceMap {
        let mut est = gt.clone();
        let sx = 2.0 / (gt.width as f64 - 1.0);
        for i in 0..gt.height {
            for j in 0..gt.width {
                if on(i * gt.width + j) {
                    let mut p = est.at(i, j);
                    p[0] += du_px * sx / 2.0 * 2.0; // du_px pixels in normalized units
                    est.set(i, j, p);
                }
            }
        }
        est
    }

    #[test]
    fn aepe_zero_on_exact_match() {
        let gt = CorrespondenceMap::identity(8, 8);
        let mask = MatchabilityMask::full(8, 8);
        assert_eq!(aepe(&gt, &gt, Some(&mask)).unwrap(), 0.0);
    }

    #[test]
    fn aepe_unit_conversion() {
        // uniform normalized error of 2/(W-1) in u is exactly 1 pixel
        let (w, h) = (64, 64);
        let gt = CorrespondenceMap::identity(w, h);
        let mut est = gt.clone();
        for i in 0..h {
            for j in 0..w {
                let mut p = est.at(i, j);
                p[0] += 2.0 / (w as f64 - 1.0);
                est.set(i, j, p);
            }
        }
        let got = aepe(&est, &gt, Some(&MatchabilityMask::full(w, h))).unwrap();
        assert!((got - 1.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn aepe_ignores_masked_errors() {
        let gt = CorrespondenceMap::identity(8, 8);
        let mut mask = MatchabilityMask::full(8, 8);
        for p in 0..32 {
            mask.data[p] = false;
        }
        let est = shifted(&gt, 5.0, |p| p < 32); // error only on invalid pixels
        assert_eq!(aepe(&est, &gt, Some(&mask)).unwrap(), 0.0);
    }

    #[test]
    fn aepe_errors_on_empty_mask() {
        let gt = CorrespondenceMap::identity(4, 4);
        let mask = MatchabilityMask { width: 4, height: 4, data: vec![false; 16] };
        assert!(matches!(aepe(&gt, &gt, Some(&mask)), Err(MetricsError::EmptyMask)));
    }

    #[test]
    fn pck_split_between_thresholds() {
        let (w, h) = (8, 8);
        let gt = CorrespondenceMap::identity(w, h);
        // half the pixels exactly 2 px off, rest exact
        let est = shifted(&gt, 2.0, |p| p % 2 == 0);
        let mask = MatchabilityMask::full(w, h);
        let r = pck(&est, &gt, Some(&mask), &[1.0, 3.0, 1e9]).unwrap();
        assert!((r[&pck_key(1.0)] - 0.5).abs() < 1e-12);
        assert!((r[&pck_key(3.0)] - 1.0).abs() < 1e-12);
        assert!((r[&pck_key(1e9)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pck_monotone_in_threshold() {
        let gt = CorrespondenceMap::identity(10, 10);
        let est = shifted(&gt, 1.7, |p| p % 3 == 0);
        let mask = MatchabilityMask::full(10, 10);
        let ths: Vec<f64> = (1..20).map(|i| i as f64 * 0.5).collect();
        let r = pck(&est, &gt, Some(&mask), &ths).unwrap();
        let vals: Vec<f64> = ths.iter().map(|t| r[&pck_key(*t)]).collect();
        for w in vals.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(pck(&gt, &gt, Some(&mask), &[0.0]).is_err());
    }

    #[test]
    fn jaccard_cases() {
        let a = MatchabilityMask::full(4, 4);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);

        let mut b = MatchabilityMask::full(4, 4);
        let mut c = MatchabilityMask::full(4, 4);
        for p in 0..16 {
            b.data[p] = p < 8;
            c.data[p] = p >= 8;
        }
        assert_eq!(jaccard(&b, &c).unwrap(), 0.0);
        assert_eq!(jaccard(&c, &b).unwrap(), 0.0);

        // pred covers gt plus an equal-sized extra region -> 0.5
        let mut gt = MatchabilityMask { width: 4, height: 4, data: vec![false; 16] };
        let mut pred = gt.clone();
        for p in 0..4 {
            gt.data[p] = true;
            pred.data[p] = true;
        }
        for p in 4..8 {
            pred.data[p] = true;
        }
        assert_eq!(jaccard(&pred, &gt).unwrap(), 0.5);

        // both empty -> 1.0 by definition
        let empty = MatchabilityMask { width: 4, height: 4, data: vec![false; 16] };
        assert_eq!(jaccard(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn probs_binarize_strictly_above_half() {
        let m = probs_to_mask(&[0.4999, 0.5, 0.5001, 1.0], 2, 2);
        assert_eq!(m.data, vec![false, false, true, true]);
    }
}
