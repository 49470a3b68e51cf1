//! Hierarchical correspondence loss, matchability loss, and their sum.

use super::{ModelError, NetworkOutput, PyramidConfig};
use crate::geometry::{downsample_map_mask, map_to_tensor, CorrespondenceMap, MatchabilityMask};
use crate::tensor::{Graph, TensorId};

/// Per-level ground truth produced by repeated halving of the finest map:
/// coordinates subsample (they are resolution independent), masks AND over
/// each 2x2 block so a coarse pixel is valid only if all children are.
pub fn level_ground_truth(
    gt_map: &CorrespondenceMap,
    gt_mask: &MatchabilityMask,
    levels: usize,
) -> Vec<(CorrespondenceMap, MatchabilityMask)> {
    let mut chain = vec![(gt_map.clone(), gt_mask.clone())];
    for _ in 1..levels {
        let (m, k) = {
            let (pm, pk) = chain.last().unwrap();
            downsample_map_mask(pm, pk)
        };
        chain.push((m, k));
    }
    chain.reverse(); // coarsest first, matching decoder order
    chain
}

/// Weighted sum over levels of the masked mean L1 map error. Levels whose
/// mask is empty contribute zero.
pub fn correspondence_loss(
    g: &mut Graph,
    out: &NetworkOutput,
    gt_map: &CorrespondenceMap,
    gt_mask: &MatchabilityMask,
    cfg: &PyramidConfig,
) -> Result<TensorId, ModelError> {
    if gt_map.width != cfg.base_resolution || gt_map.height != cfg.base_resolution {
        return Err(ModelError::Input(format!(
            "ground truth is {}x{}, model expects {}",
            gt_map.width, gt_map.height, cfg.base_resolution
        )));
    }
    let gts = level_ground_truth(gt_map, gt_mask, cfg.levels);
    let mut total: Option<TensorId> = None;
    for (l, (level_map, level_mask)) in gts.iter().enumerate() {
        let est = out.maps[l];
        let planes = map_to_tensor(level_map);
        let term = g.masked_l1(est, &planes.data, &level_mask.data)?;
        let term = g.scale(term, cfg.alpha[l])?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one level"))
}

/// Mean BCE-with-logits of the matchability head against the finest mask.
pub fn matchability_loss(
    g: &mut Graph,
    logits: TensorId,
    gt_mask: &MatchabilityMask,
) -> Result<TensorId, ModelError> {
    let targets: Vec<f32> = gt_mask.data.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
    Ok(g.bce_with_logits(logits, &targets)?)
}

/// L = L_c + beta * L_m. With beta = 0 the matchability term is omitted;
/// beta > 0 requires the matchability head.
pub fn total_loss(
    g: &mut Graph,
    out: &NetworkOutput,
    gt_map: &CorrespondenceMap,
    gt_mask: &MatchabilityMask,
    cfg: &PyramidConfig,
    beta: f64,
) -> Result<(TensorId, TensorId, Option<TensorId>), ModelError> {
    assert!(beta >= 0.0, "beta must be non-negative");
    let lc = correspondence_loss(g, out, gt_map, gt_mask, cfg)?;
    if beta == 0.0 {
        return Ok((lc, lc, None));
    }
    let logits = out.matchability_logits.ok_or(ModelError::MissingMatchabilityHead)?;
    let lm = matchability_loss(g, logits, gt_mask)?;
    let scaled = g.scale(lm, beta)?;
    let total = g.add(lc, scaled)?;
    Ok((total, lc, Some(lm)))
}
