//! The coarse-to-fine correspondence network.
//!
//! A Siamese encoder builds an L-level feature pyramid (shared weights,
//! per-location L2 normalization). The coarsest level runs a correlation
//! volume into the first map decoder; every finer level upsamples the
//! previous estimate, warps the source features by it, and decodes a
//! refined map from [upsampled map, warped source, target] features. An
//! optional matchability head predicts per-pixel confidence logits from
//! the finest decoder's penultimate activations.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use loss::{correspondence_loss, matchability_loss, total_loss};
pub use train::{train, Adam, LoadedPair, StepRecord, TrainOptions};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{map_from_tensor, CorrespondenceMap};
use crate::tensor::{identity_grid, BnStats, Graph, TensorData, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input mismatch: {0}")]
    Input(String),
    #[error("matchability head required (beta > 0) but the model has none")]
    MissingMatchabilityHead,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correlation {
    Global,
    Local { radius: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrization {
    /// Decoders predict the correspondence map directly.
    AbsoluteMap,
    /// Decoders predict residual flow added to the identity grid.
    Flow,
}

/// Pyramid and decoder layout. Per-level lists run coarsest (top) first;
/// level l has spatial resolution base_resolution / 2^(levels-1-l).
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidConfig {
    pub levels: usize,
    pub base_resolution: usize,
    /// Encoder output channels per level, coarsest first.
    pub channels_per_level: Vec<usize>,
    /// Five decoder block widths per level, coarsest first.
    pub decoder_channels: Vec<Vec<usize>>,
    /// Per-block dilation factors per level, coarsest first.
    pub dilations_per_level: Vec<Vec<usize>>,
    /// Per-level loss weights.
    pub alpha: Vec<f64>,
    pub use_matchability: bool,
    pub correlation: Correlation,
    pub l2norm_correlation: bool,
    pub parametrization: Parametrization,
}

/// Decoder widths by distance from the finest level, scaled down from the
/// coarse end where the correlation volume needs the most capacity.
const DECODER_WIDTH_TABLE: [[usize; 5]; 4] = [
    [12, 12, 8, 8, 8],
    [24, 24, 16, 12, 8],
    [48, 48, 32, 24, 16],
    [96, 96, 64, 48, 32],
];
const ENCODER_CHANNEL_TABLE: [usize; 4] = [16, 32, 64, 96];
const FINE_DILATIONS: [usize; 5] = [1, 2, 4, 4, 1];

impl PyramidConfig {
    /// Desk-scale defaults for a given pyramid depth and input resolution.
    pub fn desk_default(levels: usize, base_resolution: usize) -> Self {
        // coarsest-first: level l sits (levels-1-l) halvings above the finest
        let channels_per_level: Vec<usize> =
            (0..levels).map(|l| ENCODER_CHANNEL_TABLE[(levels - 1 - l).min(3)]).collect();
        let decoder_channels: Vec<Vec<usize>> =
            (0..levels).map(|l| DECODER_WIDTH_TABLE[(levels - 1 - l).min(3)].to_vec()).collect();
        let dilations_per_level: Vec<Vec<usize>> = (0..levels)
            .map(|l| if l >= 3 { FINE_DILATIONS.to_vec() } else { vec![1; 5] })
            .collect();
        PyramidConfig {
            levels,
            base_resolution,
            channels_per_level,
            decoder_channels,
            dilations_per_level,
            alpha: vec![1.0; levels],
            use_matchability: false,
            correlation: Correlation::Global,
            l2norm_correlation: true,
            parametrization: Parametrization::AbsoluteMap,
        }
    }

    pub fn resolution_at(&self, level: usize) -> usize {
        self.base_resolution >> (self.levels - 1 - level)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.levels == 0 {
            return Err(ModelError::Config("levels must be >= 1".into()));
        }
        if self.base_resolution % (1 << (self.levels - 1)) != 0 {
            return Err(ModelError::Config(format!(
                "resolution {} not divisible by 2^{}",
                self.base_resolution,
                self.levels - 1
            )));
        }
        for (name, len) in [
            ("channels_per_level", self.channels_per_level.len()),
            ("decoder_channels", self.decoder_channels.len()),
            ("dilations_per_level", self.dilations_per_level.len()),
            ("alpha", self.alpha.len()),
        ] {
            if len != self.levels {
                return Err(ModelError::Config(format!("{name} must have {} entries, has {len}", self.levels)));
            }
        }
        if self.alpha.iter().any(|a| *a < 0.0) {
            return Err(ModelError::Config("alpha weights must be >= 0".into()));
        }
        if self.decoder_channels.iter().any(|w| w.len() != 5) || self.dilations_per_level.iter().any(|d| d.len() != 5)
        {
            return Err(ModelError::Config("each decoder needs exactly 5 block widths/dilations".into()));
        }
        if let Correlation::Local { radius } = self.correlation {
            if radius == 0 {
                return Err(ModelError::Config("local correlation radius must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Channels of the correlation volume at the coarsest level.
    fn top_corr_channels(&self) -> usize {
        let r = self.resolution_at(0);
        match self.correlation {
            Correlation::Global => r * r,
            Correlation::Local { radius } => (2 * radius + 1).pow(2),
        }
    }
}

// ── Parameter arena and layer references ─────────────────────────────

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvRef {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BnRef {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvBnBlock {
    pub conv: ConvRef,
    pub bn: BnRef,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub blocks: Vec<ConvBnBlock>,
    pub final_conv: ConvRef,
}

#[derive(Debug, Clone)]
pub struct ModelState {
    pub cfg: PyramidConfig,
    pub params: Vec<Param>,
    pub running: Vec<BnStats>,
    /// Encoder blocks in application order (finest resolution first).
    pub encoder: Vec<ConvBnBlock>,
    /// Map decoders, coarsest level first.
    pub decoders: Vec<Decoder>,
    pub matchability: Option<Decoder>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const CORR_NORM_EPS: f64 = 1e-8;
const MATCHABILITY_CHANNELS: [usize; 3] = [32, 32, 16];

struct Builder {
    params: Vec<Param>,
    running: Vec<BnStats>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn conv(&mut self, name: &str, in_ch: usize, out_ch: usize, k: usize, stride: usize, dilation: usize, zero_init: bool) -> ConvRef {
        let fan_in = (in_ch * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n = out_ch * in_ch * k * k;
        let data = if zero_init {
            vec![0.0f32; n]
        } else {
            (0..n).map(|_| (normal_sample(&mut self.rng) * std) as f32).collect()
        };
        let w = self.push(format!("{name}.w"), vec![out_ch, in_ch, k, k], data);
        let b = self.push(format!("{name}.b"), vec![out_ch], vec![0.0; out_ch]);
        ConvRef { w, b, stride, padding: dilation * (k - 1) / 2, dilation }
    }

    fn bn(&mut self, name: &str, ch: usize) -> BnRef {
        let gamma = self.push(format!("{name}.gamma"), vec![ch], vec![1.0; ch]);
        let beta = self.push(format!("{name}.beta"), vec![ch], vec![0.0; ch]);
        self.running.push(BnStats::new(ch));
        BnRef { gamma, beta, stats: self.running.len() - 1 }
    }

    fn conv_bn(&mut self, name: &str, in_ch: usize, out_ch: usize, stride: usize, dilation: usize) -> ConvBnBlock {
        ConvBnBlock {
            conv: self.conv(&format!("{name}.conv"), in_ch, out_ch, 3, stride, dilation, false),
            bn: self.bn(&format!("{name}.bn"), out_ch),
        }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f32>) -> usize {
        self.params.push(Param { name, shape, data, trainable: true });
        self.params.len() - 1
    }
}

/// Box-Muller from a seeded stream; rand_distr's ziggurat tables are
/// avoided so initialization stays reproducible across dependency bumps.
fn normal_sample<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl ModelState {
    pub fn new(cfg: PyramidConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut b = Builder { params: Vec::new(), running: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };

        // encoder, finest-first: channels reversed from the coarsest-first list
        let enc_ch: Vec<usize> = cfg.channels_per_level.iter().rev().copied().collect();
        let mut encoder = Vec::with_capacity(cfg.levels);
        for (i, out_ch) in enc_ch.iter().enumerate() {
            let in_ch = if i == 0 { 3 } else { enc_ch[i - 1] };
            let stride = if i == 0 { 1 } else { 2 };
            encoder.push(b.conv_bn(&format!("encoder.{i}"), in_ch, *out_ch, stride, 1));
        }

        let mut decoders = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let in_ch = if l == 0 {
                cfg.top_corr_channels()
            } else {
                match cfg.correlation {
                    Correlation::Global => 2 + 2 * cfg.channels_per_level[l],
                    Correlation::Local { radius } => 2 + (2 * radius + 1).pow(2),
                }
            };
            let widths = &cfg.decoder_channels[l];
            let dils = &cfg.dilations_per_level[l];
            let mut blocks = Vec::with_capacity(5);
            let mut prev = in_ch;
            for (bi, (w, d)) in widths.iter().zip(dils).enumerate() {
                blocks.push(b.conv_bn(&format!("decoder.{l}.{bi}"), prev, *w, 1, *d));
                prev = *w;
            }
            let final_conv = b.conv(&format!("decoder.{l}.map"), prev, 2, 3, 1, 1, true);
            decoders.push(Decoder { blocks, final_conv });
        }

        let matchability = if cfg.use_matchability {
            let mut blocks = Vec::new();
            let mut prev = *cfg.decoder_channels[cfg.levels - 1].last().unwrap();
            for (bi, ch) in MATCHABILITY_CHANNELS.iter().enumerate() {
                blocks.push(b.conv_bn(&format!("matchability.{bi}"), prev, *ch, 1, 1));
                prev = *ch;
            }
            let final_conv = b.conv("matchability.logits", prev, 1, 3, 1, 1, true);
            Some(Decoder { blocks, final_conv })
        } else {
            None
        };

        Ok(ModelState { cfg, params: b.params, running: b.running, encoder, decoders, matchability })
    }

    /// Mark encoder weights as fixed; the optimizer will skip them and the
    /// graph will not compute their gradients.
    pub fn freeze_encoder(&mut self) {
        let ids: Vec<usize> = self
            .encoder
            .iter()
            .flat_map(|blk| [blk.conv.w, blk.conv.b, blk.bn.gamma, blk.bn.beta])
            .collect();
        for id in ids {
            self.params[id].trainable = false;
        }
    }
}

// ── Forward pass ─────────────────────────────────────────────────────

pub struct NetworkOutput {
    /// Estimated maps per level, coarsest first / finest last.
    pub maps: Vec<TensorId>,
    /// Pre-sigmoid matchability logits at the finest resolution.
    pub matchability_logits: Option<TensorId>,
}

impl NetworkOutput {
    pub fn finest_map(&self, g: &Graph) -> CorrespondenceMap {
        map_from_tensor(&g.to_tensor_data(*self.maps.last().expect("at least one level")))
    }

    pub fn matchability_probs(&self, g: &Graph) -> Option<Vec<f32>> {
        self.matchability_logits.map(|id| {
            g.data(id).iter().map(|z| (1.0 / (1.0 + (-(*z as f64)).exp())) as f32).collect()
        })
    }
}

/// Ids of every parameter bound into a graph, in arena order.
pub struct Binding {
    pub ids: Vec<TensorId>,
}

pub fn bind_params(g: &mut Graph, state: &ModelState, with_grads: bool) -> Result<Binding, ModelError> {
    let ids = state
        .params
        .iter()
        .map(|p| g.leaf(TensorData::new(p.shape.clone(), p.data.clone()), with_grads && p.trainable))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Binding { ids })
}

#[allow(clippy::too_many_arguments)]
fn run_conv_bn_relu(
    g: &mut Graph,
    bind: &Binding,
    running: &mut [BnStats],
    blk: &ConvBnBlock,
    x: TensorId,
    training: bool,
) -> Result<TensorId, ModelError> {
    let y = g.conv2d(x, bind.ids[blk.conv.w], bind.ids[blk.conv.b], blk.conv.stride, blk.conv.padding, blk.conv.dilation)?;
    let y = g.batchnorm(
        y,
        bind.ids[blk.bn.gamma],
        bind.ids[blk.bn.beta],
        BN_EPS,
        BN_MOMENTUM,
        training,
        &mut running[blk.bn.stats],
    )?;
    Ok(g.relu(y)?)
}

fn run_conv(g: &mut Graph, bind: &Binding, conv: &ConvRef, x: TensorId) -> Result<TensorId, ModelError> {
    Ok(g.conv2d(x, bind.ids[conv.w], bind.ids[conv.b], conv.stride, conv.padding, conv.dilation)?)
}

/// One Siamese branch: L feature maps, coarsest first, L2-normalized per
/// location. Identical weights serve both images.
pub fn build_feature_pyramid(
    g: &mut Graph,
    bind: &Binding,
    state: &mut ModelState,
    img: TensorId,
    training: bool,
) -> Result<Vec<TensorId>, ModelError> {
    let shape = g.shape(img).to_vec();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(ModelError::Input(format!("expected [1,3,H,W] image, got {shape:?}")));
    }
    if shape[2] != state.cfg.base_resolution || shape[3] != state.cfg.base_resolution {
        return Err(ModelError::Input(format!(
            "image is {}x{}, model expects {}x{}",
            shape[3], shape[2], state.cfg.base_resolution, state.cfg.base_resolution
        )));
    }
    let encoder = state.encoder.clone();
    let mut feats_fine_first = Vec::with_capacity(state.cfg.levels);
    let mut x = img;
    for blk in &encoder {
        x = run_conv_bn_relu(g, bind, &mut state.running, blk, x, training)?;
        feats_fine_first.push(g.l2_normalize_channels(x, CORR_NORM_EPS)?);
    }
    feats_fine_first.reverse();
    Ok(feats_fine_first)
}

fn decode_map(
    g: &mut Graph,
    bind: &Binding,
    state: &mut ModelState,
    level: usize,
    input: TensorId,
    training: bool,
) -> Result<(TensorId, TensorId), ModelError> {
    let dec = state.decoders[level].clone();
    let mut x = input;
    for blk in &dec.blocks {
        x = run_conv_bn_relu(g, bind, &mut state.running, blk, x, training)?;
    }
    let raw = run_conv(g, bind, &dec.final_conv, x)?;
    let map = match state.cfg.parametrization {
        Parametrization::AbsoluteMap => raw,
        Parametrization::Flow => {
            let r = state.cfg.resolution_at(level);
            let id = g.constant(identity_grid(r, r))?;
            g.add(raw, id)?
        }
    };
    Ok((map, x))
}

/// Full forward pass over one image pair.
pub fn forward(
    g: &mut Graph,
    bind: &Binding,
    state: &mut ModelState,
    src: TensorId,
    tgt: TensorId,
    training: bool,
) -> Result<NetworkOutput, ModelError> {
    if g.shape(src) != g.shape(tgt) {
        return Err(ModelError::Input("source/target resolution mismatch".into()));
    }
    let feats_s = build_feature_pyramid(g, bind, state, src, training)?;
    let feats_t = build_feature_pyramid(g, bind, state, tgt, training)?;

    let levels = state.cfg.levels;
    let mut maps = Vec::with_capacity(levels);

    // coarsest level: correlation volume into the first decoder
    let corr = match state.cfg.correlation {
        Correlation::Global => g.global_correlation(feats_s[0], feats_t[0])?,
        Correlation::Local { radius } => g.local_correlation(feats_s[0], feats_t[0], radius)?,
    };
    let corr = if state.cfg.l2norm_correlation {
        g.l2_normalize_channels(corr, CORR_NORM_EPS)?
    } else {
        corr
    };
    let (map0, penult) = decode_map(g, bind, state, 0, corr, training)?;
    maps.push(map0);
    let mut penultimate = penult;

    for l in 1..levels {
        let up = g.upsample_bilinear_2x(maps[l - 1])?;
        let warped = g.grid_sample(feats_s[l], up)?;
        let dec_in = match state.cfg.correlation {
            Correlation::Global => g.concat_channels(&[up, warped, feats_t[l]])?,
            Correlation::Local { radius } => {
                let lc = g.local_correlation(warped, feats_t[l], radius)?;
                let lc = if state.cfg.l2norm_correlation {
                    g.l2_normalize_channels(lc, CORR_NORM_EPS)?
                } else {
                    lc
                };
                g.concat_channels(&[up, lc])?
            }
        };
        let (map_l, penult) = decode_map(g, bind, state, l, dec_in, training)?;
        maps.push(map_l);
        penultimate = penult;
    }

    let matchability_logits = if let Some(head) = state.matchability.clone() {
        let mut x = penultimate;
        for blk in &head.blocks {
            x = run_conv_bn_relu(g, bind, &mut state.running, blk, x, training)?;
        }
        Some(run_conv(g, bind, &head.final_conv, x)?)
    } else {
        None
    };

    Ok(NetworkOutput { maps, matchability_logits })
}

/// Eval-mode forward over raw image tensors; returns the finest map and,
/// when the model has a matchability head, per-pixel confidence.
pub fn predict(
    state: &mut ModelState,
    src: &TensorData,
    tgt: &TensorData,
) -> Result<(CorrespondenceMap, Option<Vec<f32>>), ModelError> {
    let mut g = Graph::new();
    let bind = bind_params(&mut g, state, false)?;
    let src = g.leaf(src.clone(), false)?;
    let tgt = g.leaf(tgt.clone(), false)?;
    let out = forward(&mut g, &bind, state, src, tgt, false)?;
    let map = out.finest_map(&g);
    let probs = out.matchability_probs(&g);
    Ok((map, probs))
}
