//! Central finite-difference checks for every differentiable operation.
//!
//! Inputs are generated away from non-differentiable points (ReLU kinks,
//! bilinear cell boundaries, L1 zeros) so the h=1e-3 probe stays on one
//! smooth branch.

use dgc_core::gradcheck::{kink_free_values, max_rel_error};
use dgc_core::tensor::{identity_grid, BnStats, Graph, TensorData, TensorId};

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;

fn t(shape: Vec<usize>, data: Vec<f32>) -> TensorData {
    TensorData::new(shape, data)
}

/// Weighted sum keeps every element's gradient O(1) for the comparison.
fn weighted(g: &mut Graph, x: TensorId, seed: u64) -> TensorId {
    let n = g.data(x).len();
    let w = g
        .leaf(t(g.shape(x).to_vec(), kink_free_values(n, seed, 0.2)), false)
        .unwrap();
    let m = g.mul(x, w).unwrap();
    g.sum(m).unwrap()
}

fn check(name: &str, inputs: &[TensorData], f: impl Fn(&mut Graph, &[TensorId]) -> Result<TensorId, dgc_core::tensor::TensorError>) {
    let err = max_rel_error(inputs, &f, H).unwrap_or_else(|e| panic!("{name}: {e}"));
    assert!(err < TOL, "{name}: relative error {err:.2e} >= {TOL:.0e}");
}

/// Sampling grid with pixel fractions in [0.2, 0.8], strictly inside the
/// image so the zero-padding branch is never crossed by the probe.
fn interior_grid(hg: usize, wg: usize, h: usize, w: usize, seed: u64) -> TensorData {
    let r = kink_free_values(2 * hg * wg, seed, 0.0);
    let data = r
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let size = if i < hg * wg { w } else { h };
            let cells = (size - 1) as f64;
            let cell = ((v * 0.5 + 0.5) as f64 * (cells - 1.0)).floor().clamp(0.0, cells - 1.0);
            let frac = 0.2 + 0.6 * ((v * 7.3).sin() * 0.5 + 0.5) as f64;
            (2.0 * (cell + frac) / cells - 1.0) as f32
        })
        .collect();
    t(vec![1, 2, hg, wg], data)
}

#[test]
fn conv2d_gradients() {
    let cases = [
        (1usize, 2usize, 3usize, 4usize, 4usize, 3usize, 1usize, 1usize, 1usize),
        (1, 1, 2, 5, 5, 3, 1, 0, 1),
        (2, 3, 2, 4, 4, 3, 1, 1, 1),
        (1, 2, 4, 6, 6, 3, 2, 1, 1),
        (1, 2, 2, 5, 5, 3, 1, 2, 2),
        (1, 4, 1, 3, 3, 1, 1, 0, 1),
        (1, 2, 3, 7, 5, 3, 2, 1, 1),
        (1, 3, 2, 6, 6, 5, 1, 2, 1),
    ];
    for (i, (n, c, o, h, w, k, stride, pad, dil)) in cases.into_iter().enumerate() {
        let seed = 100 + i as u64;
        let inputs = vec![
            t(vec![n, c, h, w], kink_free_values(n * c * h * w, seed, 0.01)),
            t(vec![o, c, k, k], kink_free_values(o * c * k * k, seed + 1, 0.01)),
            t(vec![o], kink_free_values(o, seed + 2, 0.01)),
        ];
        check(&format!("conv2d case {i}"), &inputs, |g, ids| {
            let y = g.conv2d(ids[0], ids[1], ids[2], stride, pad, dil)?;
            weighted(g, y, seed + 3);
            g.sum(y)
        });
    }
}

#[test]
fn batchnorm_gradients() {
    for (i, (n, c, h, w)) in [(1usize, 2usize, 3usize, 3usize), (2, 3, 2, 2), (1, 1, 4, 4), (1, 4, 2, 3)].into_iter().enumerate() {
        let seed = 200 + i as u64;
        let inputs = vec![
            t(vec![n, c, h, w], kink_free_values(n * c * h * w, seed, 0.05)),
            t(vec![c], kink_free_values(c, seed + 1, 0.3)),
            t(vec![c], kink_free_values(c, seed + 2, 0.05)),
        ];
        check(&format!("batchnorm train case {i}"), &inputs, |g, ids| {
            let mut stats = BnStats::new(c);
            let y = g.batchnorm(ids[0], ids[1], ids[2], 1e-5, 0.1, true, &mut stats)?;
            Ok(weighted(g, y, seed + 3))
        });
    }
    for (i, (n, c, h, w)) in [(1usize, 3usize, 3usize, 3usize), (2, 2, 2, 3)].into_iter().enumerate() {
        let seed = 250 + i as u64;
        let inputs = vec![
            t(vec![n, c, h, w], kink_free_values(n * c * h * w, seed, 0.05)),
            t(vec![c], kink_free_values(c, seed + 1, 0.3)),
            t(vec![c], kink_free_values(c, seed + 2, 0.05)),
        ];
        check(&format!("batchnorm eval case {i}"), &inputs, |g, ids| {
            let mut stats = BnStats::new(c);
            stats.mean.iter_mut().enumerate().for_each(|(k, v)| *v = 0.1 * k as f32);
            stats.var.iter_mut().enumerate().for_each(|(k, v)| *v = 1.0 + 0.2 * k as f32);
            let y = g.batchnorm(ids[0], ids[1], ids[2], 1e-5, 0.1, false, &mut stats)?;
            Ok(weighted(g, y, seed + 3))
        });
    }
}

#[test]
fn pointwise_gradients() {
    for i in 0..4u64 {
        let n = 6 + 3 * i as usize;
        let inputs = vec![t(vec![n], kink_free_values(n, 300 + i, 0.05))];
        check(&format!("relu case {i}"), &inputs, |g, ids| {
            let y = g.relu(ids[0])?;
            Ok(weighted(g, y, 310 + i))
        });
    }
    for i in 0..3u64 {
        let n = 5 + 2 * i as usize;
        let inputs = vec![t(vec![n], kink_free_values(n, 320 + i, 0.0))];
        check(&format!("sigmoid case {i}"), &inputs, |g, ids| {
            let y = g.sigmoid(ids[0])?;
            Ok(weighted(g, y, 330 + i))
        });
    }
}

#[test]
fn arithmetic_gradients() {
    for i in 0..3u64 {
        let n = 4 + i as usize;
        let inputs = vec![
            t(vec![n], kink_free_values(n, 400 + i, 0.0)),
            t(vec![n], kink_free_values(n, 410 + i, 0.0)),
        ];
        check(&format!("add/sub/mul chain case {i}"), &inputs, |g, ids| {
            let a = g.add(ids[0], ids[1])?;
            let b = g.sub(ids[0], ids[1])?;
            let m = g.mul(a, b)?;
            let s = g.scale(m, 0.7)?;
            Ok(weighted(g, s, 420 + i))
        });
        check(&format!("mean case {i}"), &inputs[..1], |g, ids| g.mean(ids[0]));
    }
}

#[test]
fn concat_and_slice_gradients() {
    for i in 0..2u64 {
        let inputs = vec![
            t(vec![1, 2, 3, 3], kink_free_values(18, 500 + i, 0.0)),
            t(vec![1, 1, 3, 3], kink_free_values(9, 510 + i, 0.0)),
        ];
        check(&format!("concat case {i}"), &inputs, |g, ids| {
            let c = g.concat_channels(&[ids[0], ids[1], ids[0]])?;
            let s = g.slice_channels(c, 1, 4)?;
            Ok(weighted(g, s, 520 + i))
        });
    }
}

#[test]
fn upsample_gradients() {
    for (i, (c, h, w)) in [(1usize, 2usize, 2usize), (2, 3, 2), (1, 4, 4)].into_iter().enumerate() {
        let seed = 600 + i as u64;
        let inputs = vec![t(vec![1, c, h, w], kink_free_values(c * h * w, seed, 0.0))];
        check(&format!("upsample case {i}"), &inputs, |g, ids| {
            let y = g.upsample_bilinear_2x(ids[0])?;
            Ok(weighted(g, y, seed + 1))
        });
    }
}

#[test]
fn l2norm_gradients() {
    for (i, (c, h, w)) in [(3usize, 2usize, 2usize), (2, 3, 3), (5, 1, 4), (4, 2, 3)].into_iter().enumerate() {
        let seed = 700 + i as u64;
        let inputs = vec![t(vec![1, c, h, w], kink_free_values(c * h * w, seed, 0.1))];
        check(&format!("l2norm case {i}"), &inputs, |g, ids| {
            let y = g.l2_normalize_channels(ids[0], 1e-8)?;
            Ok(weighted(g, y, seed + 1))
        });
    }
}

#[test]
fn correlation_gradients() {
    for (i, (c, h, w)) in [(3usize, 3usize, 3usize), (4, 2, 4), (2, 4, 2)].into_iter().enumerate() {
        let seed = 800 + i as u64;
        let inputs = vec![
            t(vec![1, c, h, w], kink_free_values(c * h * w, seed, 0.05)),
            t(vec![1, c, h, w], kink_free_values(c * h * w, seed + 1, 0.05)),
        ];
        check(&format!("global_correlation case {i}"), &inputs, |g, ids| {
            let y = g.global_correlation(ids[0], ids[1])?;
            Ok(weighted(g, y, seed + 2))
        });
        check(&format!("local_correlation case {i}"), &inputs, |g, ids| {
            let y = g.local_correlation(ids[0], ids[1], 1)?;
            Ok(weighted(g, y, seed + 3))
        });
    }
}

#[test]
fn grid_sample_gradients() {
    for (i, (c, h, w, hg, wg)) in
        [(1usize, 4usize, 4usize, 3usize, 3usize), (2, 3, 5, 2, 4), (1, 5, 3, 4, 2)].into_iter().enumerate()
    {
        let seed = 900 + i as u64;
        let inputs = vec![
            t(vec![1, c, h, w], kink_free_values(c * h * w, seed, 0.0)),
            interior_grid(hg, wg, h, w, seed + 1),
        ];
        check(&format!("grid_sample case {i} (both args)"), &inputs, |g, ids| {
            let y = g.grid_sample(ids[0], ids[1])?;
            Ok(weighted(g, y, seed + 2))
        });
    }
    // image-only gradient under an identity grid held constant
    let inputs = vec![t(vec![1, 2, 3, 3], kink_free_values(18, 950, 0.0))];
    check("grid_sample identity-grid image grad", &inputs, |g, ids| {
        let grid = g.constant(identity_grid(3, 3))?;
        let y = g.grid_sample(ids[0], grid)?;
        Ok(weighted(g, y, 951))
    });
}

#[test]
fn loss_gradients() {
    for i in 0..3u64 {
        let (h, w) = (3 + i as usize, 3);
        let id = identity_grid(h, w);
        let offsets = kink_free_values(2 * h * w, 1000 + i, 0.1);
        let est: Vec<f32> = id.data.iter().zip(&offsets).map(|(a, b)| a + 0.4 * b).collect();
        let mask: Vec<bool> = (0..h * w).map(|p| p % 3 != 0).collect();
        let gt = id.data.clone();
        let inputs = vec![t(vec![1, 2, h, w], est)];
        check(&format!("masked_l1 case {i}"), &inputs, move |g, ids| g.masked_l1(ids[0], &gt, &mask));
    }
    for i in 0..3u64 {
        let (h, w) = (2 + i as usize, 3);
        let logits = kink_free_values(h * w, 1100 + i, 0.0).iter().map(|v| v * 3.0).collect();
        let targets: Vec<f32> = (0..h * w).map(|p| ((p + i as usize) % 2) as f32).collect();
        let inputs = vec![t(vec![1, 1, h, w], logits)];
        check(&format!("bce case {i}"), &inputs, move |g, ids| g.bce_with_logits(ids[0], &targets));
    }
}

/// A miniature of the full decoder path: conv -> bn -> relu -> warp -> loss.
#[test]
fn composed_path_gradient() {
    let (c, h, w) = (2, 4, 4);
    let inputs = vec![
        t(vec![1, c, h, w], kink_free_values(c * h * w, 1200, 0.05)),
        t(vec![2, c, 3, 3], kink_free_values(2 * c * 9, 1201, 0.05)),
        t(vec![2], vec![0.1, -0.2]),
    ];
    let id = identity_grid(h, w);
    let gt = id.data.clone();
    let mask = vec![true; h * w];
    check("composed conv-bn-relu-warp-l1", &inputs, move |g, ids| {
        let y = g.conv2d(ids[0], ids[1], ids[2], 1, 1, 1)?;
        let mut stats = BnStats::new(2);
        let y = g.batchnorm(y, ids[2], ids[2], 1e-5, 0.1, true, &mut stats)?;
        let y = g.relu(y)?;
        let grid = g.constant(interior_grid(h, w, h, w, 1203))?;
        let y = g.grid_sample(y, grid)?;
        g.masked_l1(y, &gt, &mask)
    });
}
