//! Dense correspondence maps and matchability masks.
//!
//! A map stores, per pixel, the normalized [-1,1]² coordinate its content
//! corresponds to. Coordinates are kept at f32 precision (the serialized
//! grade) so flow round-trips and file round-trips are exact.

use super::{GeometricTransform, GeometryError};
use crate::tensor::{pixel_center_norm, TensorData};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, interleaved (u, v) per pixel.
    pub data: Vec<f64>,
}

impl CorrespondenceMap {
    pub fn identity(width: usize, height: usize) -> Self {
        let mut data = vec![0.0; width * height * 2];
        for i in 0..height {
            for j in 0..width {
                data[(i * width + j) * 2] = pixel_center_norm(j, width) as f64;
                data[(i * width + j) * 2 + 1] = pixel_center_norm(i, height) as f64;
            }
        }
        CorrespondenceMap { width, height, data }
    }

    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        let k = (i * self.width + j) * 2;
        [self.data[k], self.data[k + 1]]
    }

    pub fn set(&mut self, i: usize, j: usize, p: [f64; 2]) {
        let k = (i * self.width + j) * 2;
        self.data[k] = p[0];
        self.data[k + 1] = p[1];
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchabilityMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl MatchabilityMask {
    pub fn full(width: usize, height: usize) -> Self {
        MatchabilityMask { width, height, data: vec![true; width * height] }
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn coverage(&self) -> f64 {
        self.valid_count() as f64 / self.data.len() as f64
    }
}

/// Evaluate a transform at every pixel center. Mask is true exactly where
/// the mapped coordinate stays inside [-1,1]² (boundary counts as valid).
/// Coordinates are rounded through f32 to match the serialized precision.
pub fn gt_correspondence_map(
    t: &GeometricTransform,
    width: usize,
    height: usize,
) -> Result<(CorrespondenceMap, MatchabilityMask), GeometryError> {
    let mut map = CorrespondenceMap { width, height, data: vec![0.0; width * height * 2] };
    let mut mask = MatchabilityMask { width, height, data: vec![false; width * height] };
    for i in 0..height {
        for j in 0..width {
            let p = [pixel_center_norm(j, width) as f64, pixel_center_norm(i, height) as f64];
            let q = t.apply(p)?;
            let q = [q[0] as f32 as f64, q[1] as f32 as f64];
            map.set(i, j, q);
            mask.data[i * width + j] = q[0].abs() <= 1.0 && q[1].abs() <= 1.0;
        }
    }
    Ok((map, mask))
}

/// Displacement field: flow(x) = map(x) - identity(x).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Exact on f32-grade maps: both operands carry 24-bit mantissas, so the
/// f64 difference (and the later re-addition) round-trips bitwise.
pub fn map_to_flow(m: &CorrespondenceMap) -> FlowMap {
    let id = CorrespondenceMap::identity(m.width, m.height);
    let data = m.data.iter().zip(&id.data).map(|(a, b)| a - b).collect();
    FlowMap { width: m.width, height: m.height, data }
}

pub fn flow_to_map(f: &FlowMap) -> CorrespondenceMap {
    let id = CorrespondenceMap::identity(f.width, f.height);
    let data = f.data.iter().zip(&id.data).map(|(a, b)| a + b).collect();
    CorrespondenceMap { width: f.width, height: f.height, data }
}

/// One pyramid halving step: the map keeps every second pixel (normalized
/// coordinates are resolution-independent), the mask ANDs each 2x2 block.
pub fn downsample_map_mask(map: &CorrespondenceMap, mask: &MatchabilityMask) -> (CorrespondenceMap, MatchabilityMask) {
    debug_assert_eq!(map.width % 2, 0);
    debug_assert_eq!(map.height % 2, 0);
    let (w2, h2) = (map.width / 2, map.height / 2);
    let mut m2 = CorrespondenceMap { width: w2, height: h2, data: vec![0.0; w2 * h2 * 2] };
    let mut k2 = MatchabilityMask { width: w2, height: h2, data: vec![false; w2 * h2] };
    for i in 0..h2 {
        for j in 0..w2 {
            m2.set(i, j, map.at(2 * i, 2 * j));
            let a = mask.data[2 * i * mask.width + 2 * j];
            let b = mask.data[2 * i * mask.width + 2 * j + 1];
            let c = mask.data[(2 * i + 1) * mask.width + 2 * j];
            let d = mask.data[(2 * i + 1) * mask.width + 2 * j + 1];
            k2.data[i * w2 + j] = a && b && c && d;
        }
    }
    (m2, k2)
}

/// Planar [1,2,h,w] tensor view of a map (u plane then v plane).
pub fn map_to_tensor(m: &CorrespondenceMap) -> TensorData {
    let hw = m.width * m.height;
    let mut data = vec![0.0f32; 2 * hw];
    for p in 0..hw {
        data[p] = m.data[2 * p] as f32;
        data[hw + p] = m.data[2 * p + 1] as f32;
    }
    TensorData::new(vec![1, 2, m.height, m.width], data)
}

pub fn map_from_tensor(t: &TensorData) -> CorrespondenceMap {
    assert_eq!(t.shape.len(), 4);
    assert_eq!(t.shape[1], 2);
    let (h, w) = (t.shape[2], t.shape[3]);
    let hw = h * w;
    let mut data = vec![0.0f64; 2 * hw];
    for p in 0..hw {
        data[2 * p] = t.data[p] as f64;
        data[2 * p + 1] = t.data[hw + p] as f64;
    }
    CorrespondenceMap { width: w, height: h, data }
}
