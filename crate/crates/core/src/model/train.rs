//! Adaptive-moment training loop: deterministic shuffling, per-step loss
//! records, gradient accumulation for batches larger than one pair.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bind_params, forward, total_loss, ModelError, ModelState};
use crate::geometry::io::StoredPair;
use crate::geometry::{CorrespondenceMap, MatchabilityMask};
use crate::tensor::{Graph, TensorData, TensorError};

#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub source: TensorData,
    pub target: TensorData,
    pub gt_map: CorrespondenceMap,
    pub gt_mask: MatchabilityMask,
}

impl LoadedPair {
    pub fn from_stored(p: &StoredPair) -> Self {
        LoadedPair {
            source: p.source.to_tensor(),
            target: p.target.to_tensor(),
            gt_map: p.gt_map.clone(),
            gt_mask: p.gt_mask.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Matchability loss weight; 0 trains the correspondence loss alone.
    pub beta: f64,
    /// Epoch numbering offset for resumed/curriculum phases.
    pub start_epoch: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { lr: 1e-3, epochs: 30, batch: 1, seed: 0, beta: 0.0, start_epoch: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_c: f64,
    pub l_m: f64,
    pub l_total: f64,
}

/// Adam with bias correction; moments in f64, parameters stay f32.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(state: &ModelState, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: state.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: state.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    /// Apply one update from per-parameter gradients (None = skip).
    pub fn step(&mut self, state: &mut ModelState, grads: &[Option<Vec<f64>>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in state.params.iter_mut().enumerate() {
            let Some(g) = grads[i].as_ref() else { continue };
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, gk) in g.iter().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p.data[k] = (p.data[k] as f64 - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

/// Train over a fixed pair list. The schedule is a pure function of the
/// seed: per-epoch shuffles come from a ChaCha stream, batches accumulate
/// gradients in pair order, and one Adam step closes each batch.
pub fn train(
    state: &mut ModelState,
    pairs: &[LoadedPair],
    opts: &TrainOptions,
    mut on_step: impl FnMut(StepRecord),
) -> Result<(), ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::Input("empty training set".into()));
    }
    if opts.beta > 0.0 && state.matchability.is_none() {
        return Err(ModelError::MissingMatchabilityHead);
    }
    let mut opt = Adam::new(state, opts.lr);
    let mut step = 0usize;
    let n_params = state.params.len();
    for e in 0..opts.epochs {
        let epoch = opts.start_epoch + e;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);

        for chunk in order.chunks(opts.batch.max(1)) {
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_params];
            let mut sum_lc = 0.0;
            let mut sum_lm = 0.0;
            let mut sum_total = 0.0;
            for &pi in chunk {
                let pair = &pairs[pi];
                let mut g = Graph::new();
                let bind = bind_params(&mut g, state, true)?;
                let src = g.leaf(pair.source.clone(), false)?;
                let tgt = g.leaf(pair.target.clone(), false)?;
                let out = forward(&mut g, &bind, state, src, tgt, true)
                    .map_err(|err| divergence(err, epoch, step))?;
                let (loss, lc, lm) = total_loss(&mut g, &out, &pair.gt_map, &pair.gt_mask, &state.cfg, opts.beta)
                    .map_err(|err| divergence(err, epoch, step))?;
                let l_total = g.scalar_f64(loss).unwrap_or(g.data(loss)[0] as f64);
                if !l_total.is_finite() {
                    return Err(ModelError::Diverged { epoch, step });
                }
                sum_total += l_total;
                sum_lc += g.scalar_f64(lc).unwrap_or_default();
                sum_lm += lm.and_then(|id| g.scalar_f64(id)).unwrap_or_default();
                g.backward(loss)?;
                for (i, id) in bind.ids.iter().enumerate() {
                    if let Some(gr) = g.grad(*id) {
                        let slot = grads[i].get_or_insert_with(|| vec![0.0; gr.len()]);
                        for (s, v) in slot.iter_mut().zip(gr) {
                            *s += *v as f64;
                        }
                    }
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for gslot in grads.iter_mut().flatten() {
                for v in gslot.iter_mut() {
                    *v *= scale;
                }
            }
            opt.step(state, &grads);
            step += 1;
            on_step(StepRecord {
                epoch,
                step,
                l_c: sum_lc * scale,
                l_m: sum_lm * scale,
                l_total: sum_total * scale,
            });
        }
    }
    Ok(())
}

fn divergence(err: ModelError, epoch: usize, step: usize) -> ModelError {
    match err {
        ModelError::Tensor(TensorError::NonFinite { .. }) => ModelError::Diverged { epoch, step },
        other => other,
    }
}
