//! Scaled probe of the training smoke: train on affine pairs, report
//! validation AEPE / PCK trajectory.

use dgc_core::geometry::synth::{generate_base, render_pair};
use dgc_core::geometry::{sample_transform, TransformKind};
use dgc_core::metrics::{aepe, pck, pck_key};
use dgc_core::model::{predict, train, LoadedPair, ModelState, PyramidConfig, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn make(cfg: &PyramidConfig, n: usize, seed: u64, strength: f64) -> Vec<LoadedPair> {
    let res = cfg.base_resolution;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
            let base = generate_base(&mut rng, 2 * res, 2 * res);
            loop {
                let t = sample_transform(TransformKind::Affine, &mut rng, strength).unwrap();
                if let Ok(p) = render_pair(&base, &t, res, res) {
                    return LoadedPair {
                        source: p.source.to_tensor(),
                        target: p.target.to_tensor(),
                        gt_map: p.gt_map,
                        gt_mask: p.gt_mask,
                    };
                }
            }
        })
        .collect()
}

fn eval(state: &mut ModelState, pairs: &[LoadedPair]) -> (f64, f64) {
    let mut a = 0.0;
    let mut p3 = 0.0;
    for pair in pairs {
        let (est, _) = predict(state, &pair.source, &pair.target).unwrap();
        a += aepe(&est, &pair.gt_map, Some(&pair.gt_mask)).unwrap();
        p3 += pck(&est, &pair.gt_map, Some(&pair.gt_mask), &[3.0]).unwrap()[&pck_key(3.0)];
    }
    (a / pairs.len() as f64, p3 / pairs.len() as f64)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let strength: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.15);

    let cfg = PyramidConfig::desk_default(4, 64);
    let mut state = ModelState::new(cfg.clone(), 0).unwrap();
    let train_pairs = make(&cfg, n_train, 100, strength);
    let val_pairs = make(&cfg, 12, 999_000, strength);

    let (a0, p0) = eval(&mut state, &val_pairs);
    println!("untrained: val AEPE {a0:.3} px, PCK@3 {p0:.3}");

    let t0 = Instant::now();
    for round in 0..epochs {
        let opts = TrainOptions { lr, epochs: 1, seed: 7, start_epoch: round, ..Default::default() };
        let mut last = 0.0;
        train(&mut state, &train_pairs, &opts, |r| last = r.l_total).unwrap();
        let (a, p) = eval(&mut state, &val_pairs);
        println!(
            "epoch {:>2}: loss {:.4}  val AEPE {:.3} px  PCK@3 {:.3}  ({:.0}s)",
            round, last, a, p, t0.elapsed().as_secs_f64()
        );
    }
}
