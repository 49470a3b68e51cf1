//! Rough per-step timing for the desk-scale configuration.

use dgc_core::geometry::synth::{generate_base, render_pair};
use dgc_core::geometry::{sample_transform, TransformKind};
use dgc_core::model::{train, LoadedPair, ModelState, PyramidConfig, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let cfg = PyramidConfig::desk_default(4, 64);
    let mut state = ModelState::new(cfg.clone(), 0).unwrap();
    let pairs: Vec<LoadedPair> = (0..8)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let base = generate_base(&mut rng, 128, 128);
            let t = sample_transform(TransformKind::Affine, &mut rng, 0.15).unwrap();
            let p = render_pair(&base, &t, 64, 64).unwrap();
            LoadedPair {
                source: p.source.to_tensor(),
                target: p.target.to_tensor(),
                gt_map: p.gt_map,
                gt_mask: p.gt_mask,
            }
        })
        .collect();
    let opts = TrainOptions { lr: 1e-3, epochs: 2, ..Default::default() };
    let t0 = Instant::now();
    let mut steps = 0;
    train(&mut state, &pairs, &opts, |_| steps += 1).unwrap();
    let el = t0.elapsed().as_secs_f64();
    println!(
        "{} steps in {:.2}s -> {:.1} ms/step; 6000-step smoke ≈ {:.1} min",
        steps,
        el,
        1000.0 * el / steps as f64,
        6000.0 * el / steps as f64 / 60.0
    );
}
