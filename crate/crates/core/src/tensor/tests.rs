use super::*;

fn t4(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> TensorData {
    TensorData::new(vec![n, c, h, w], data)
}

/// Quadruple-loop convolution reference, independent of the im2col path.
#[allow(clippy::too_many_arguments)]
fn naive_conv2d(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    wt: &[f32],
    o: usize,
    k: usize,
    bias: &[f32],
    stride: usize,
    padding: usize,
    dilation: usize,
) -> (Vec<f32>, usize, usize) {
    let ho = (h + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
    let wo = (w + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
    let mut out = vec![0.0f32; o * ho * wo];
    for oc in 0..o {
        for oi in 0..ho {
            for oj in 0..wo {
                let mut acc = bias[oc] as f64;
                for ci in 0..c {
                    for ki in 0..k {
                        for kj in 0..k {
                            let iy = (oi * stride + ki * dilation) as isize - padding as isize;
                            let ix = (oj * stride + kj * dilation) as isize - padding as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                acc += x[ci * h * w + iy as usize * w + ix as usize] as f64
                                    * wt[oc * c * k * k + ci * k * k + ki * k + kj] as f64;
                            }
                        }
                    }
                }
                out[oc * ho * wo + oi * wo + oj] = acc as f32;
            }
        }
    }
    (out, ho, wo)
}

#[test]
fn conv2d_scalar_scaling() {
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 1, 3, 3, vec![1.0; 9]), false).unwrap();
    let w = g.leaf(t4(1, 1, 1, 1, vec![2.0]), false).unwrap();
    let b = g.leaf(TensorData::new(vec![1], vec![0.0]), false).unwrap();
    let y = g.conv2d(x, w, b, 1, 0, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 3, 3]);
    assert!(g.data(y).iter().all(|v| (*v - 2.0).abs() < 1e-7));
}

#[test]
fn conv2d_matches_naive_oracle() {
    let xv: Vec<f32> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.1 * i as f32 }).collect();
    let wv = vec![1.0f32 / 9.0; 9];
    let (want, ho, wo) = naive_conv2d(&xv, 1, 4, 4, &wv, 1, 3, &[0.0], 1, 1, 1);
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 1, 4, 4, xv), false).unwrap();
    let w = g.leaf(t4(1, 1, 3, 3, wv), false).unwrap();
    let b = g.leaf(TensorData::new(vec![1], vec![0.0]), false).unwrap();
    let y = g.conv2d(x, w, b, 1, 1, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, ho, wo]);
    for (a, e) in g.data(y).iter().zip(&want) {
        assert!((a - e).abs() < 1e-6, "{a} vs {e}");
    }
}

#[test]
fn conv2d_dilation_spreads_impulse() {
    // impulse at the center of a 5x5 input; 3x3 kernel, dilation 2
    let mut xv = vec![0.0f32; 25];
    xv[12] = 1.0;
    let wv: Vec<f32> = (1..=9).map(|i| i as f32).collect();
    let (want, _, _) = naive_conv2d(&xv, 1, 5, 5, &wv, 1, 3, &[0.0], 1, 2, 2);
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 1, 5, 5, xv), false).unwrap();
    let w = g.leaf(t4(1, 1, 3, 3, wv.clone()), false).unwrap();
    let b = g.leaf(TensorData::new(vec![1], vec![0.0]), false).unwrap();
    let y = g.conv2d(x, w, b, 1, 2, 2).unwrap();
    let got = g.data(y);
    for (a, e) in got.iter().zip(&want) {
        assert!((a - e).abs() < 1e-6);
    }
    // kernel taps appear mirrored around the impulse at +-2 offsets
    assert_eq!(got[2 * 5 + 2], 5.0); // center tap
    assert_eq!(got[0], 9.0); // (-2,-2) sees w[2,2]
    assert_eq!(got[4 * 5 + 4], 1.0); // (+2,+2) sees w[0,0]
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 2, 3, 3, vec![0.0; 18]), false).unwrap();
    let w = g.leaf(t4(1, 3, 1, 1, vec![0.0; 3]), false).unwrap();
    let b = g.leaf(TensorData::new(vec![1], vec![0.0]), false).unwrap();
    assert!(matches!(g.conv2d(x, w, b, 1, 0, 1), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn batchnorm_constant_channel_gives_beta() {
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 1, 2, 2, vec![3.5; 4]), false).unwrap();
    let gamma = g.leaf(TensorData::new(vec![1], vec![2.0]), false).unwrap();
    let beta = g.leaf(TensorData::new(vec![1], vec![-0.7]), false).unwrap();
    let mut stats = BnStats::new(1);
    let y = g.batchnorm(x, gamma, beta, 1e-5, 0.1, true, &mut stats).unwrap();
    for v in g.data(y) {
        assert!((v - -0.7).abs() < 1e-5);
    }
}

#[test]
fn batchnorm_standardizes_two_values() {
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 1, 1, 2, vec![0.0, 2.0]), false).unwrap();
    let gamma = g.leaf(TensorData::new(vec![1], vec![1.0]), false).unwrap();
    let beta = g.leaf(TensorData::new(vec![1], vec![0.0]), false).unwrap();
    let mut stats = BnStats::new(1);
    let y = g.batchnorm(x, gamma, beta, 1e-5, 0.1, true, &mut stats).unwrap();
    assert!((g.data(y)[0] + 1.0).abs() < 1e-4);
    assert!((g.data(y)[1] - 1.0).abs() < 1e-4);
    // running stats moved toward the batch: mean 0.1*1.0, var 0.1*2 + 0.9
    assert!((stats.mean[0] - 0.1).abs() < 1e-6);
    assert!((stats.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-5);
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut g = Graph::new();
    let xv = vec![0.25, -1.5, 3.0, 0.0];
    let x = g.leaf(t4(1, 1, 2, 2, xv.clone()), false).unwrap();
    let gamma = g.leaf(TensorData::new(vec![1], vec![1.0]), false).unwrap();
    let beta = g.leaf(TensorData::new(vec![1], vec![0.0]), false).unwrap();
    let mut stats = BnStats::new(1);
    let y = g.batchnorm(x, gamma, beta, 1e-5, 0.1, false, &mut stats).unwrap();
    for (a, e) in g.data(y).iter().zip(&xv) {
        assert!((a - e).abs() < 1e-4);
    }
}

#[test]
fn batchnorm_rejects_nonpositive_eps() {
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 1, 1, 2, vec![0.0, 1.0]), false).unwrap();
    let gamma = g.leaf(TensorData::new(vec![1], vec![1.0]), false).unwrap();
    let beta = g.leaf(TensorData::new(vec![1], vec![0.0]), false).unwrap();
    let mut stats = BnStats::new(1);
    assert!(g.batchnorm(x, gamma, beta, 0.0, 0.1, true, &mut stats).is_err());
}

#[test]
fn relu_and_sigmoid_pointwise() {
    let mut g = Graph::new();
    let x = g.leaf(TensorData::new(vec![3], vec![-1.0, 0.0, 2.0]), false).unwrap();
    let y = g.relu(x).unwrap();
    assert_eq!(g.data(y), &[0.0, 0.0, 2.0]);
    let z = g.leaf(TensorData::new(vec![1], vec![0.0]), false).unwrap();
    let s = g.sigmoid(z).unwrap();
    assert!((g.data(s)[0] - 0.5).abs() < 1e-7);
}

#[test]
fn concat_then_slice_recovers_inputs() {
    let mut g = Graph::new();
    let a = g.leaf(t4(1, 2, 2, 2, (0..8).map(|i| i as f32).collect()), false).unwrap();
    let b = g.leaf(t4(1, 1, 2, 2, vec![9.0; 4]), false).unwrap();
    let cat = g.concat_channels(&[a, b]).unwrap();
    assert_eq!(g.shape(cat), &[1, 3, 2, 2]);
    let sa = g.slice_channels(cat, 0, 2).unwrap();
    let sb = g.slice_channels(cat, 2, 3).unwrap();
    assert_eq!(g.data(sa), g.data(a));
    assert_eq!(g.data(sb), g.data(b));
}

#[test]
fn concat_rejects_empty_list() {
    let mut g = Graph::new();
    assert!(g.concat_channels(&[]).is_err());
}

#[test]
fn upsample_preserves_corners() {
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]), false).unwrap();
    let y = g.upsample_bilinear_2x(x).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 4, 4]);
    let d = g.data(y);
    assert_eq!(d[0], 0.0);
    assert_eq!(d[3], 1.0);
    assert_eq!(d[12], 2.0);
    assert_eq!(d[15], 3.0);
}

#[test]
fn l2norm_three_four_five() {
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 2, 1, 1, vec![3.0, 4.0]), false).unwrap();
    let y = g.l2_normalize_channels(x, 1e-8).unwrap();
    assert!((g.data(y)[0] - 0.6).abs() < 1e-6);
    assert!((g.data(y)[1] - 0.8).abs() < 1e-6);
}

#[test]
fn l2norm_zero_vector_stays_zero() {
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 3, 1, 1, vec![0.0; 3]), false).unwrap();
    let y = g.l2_normalize_channels(x, 1e-8).unwrap();
    assert!(g.data(y).iter().all(|v| *v == 0.0));
}

#[test]
fn l2norm_unit_norms_and_idempotent() {
    let vals = crate::gradcheck::kink_free_values(2 * 5 * 4 * 3, 11, 0.01);
    let mut g = Graph::new();
    let x = g.leaf(t4(2, 5, 4, 3, vals), false).unwrap();
    let y = g.l2_normalize_channels(x, 1e-8).unwrap();
    let z = g.l2_normalize_channels(y, 1e-8).unwrap();
    let (yd, zd) = (g.data(y), g.data(z));
    for n in 0..2 {
        for p in 0..12 {
            let norm: f32 = (0..5).map(|c| yd[(n * 5 + c) * 12 + p].powi(2)).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
        }
    }
    for (a, b) in yd.iter().zip(zd) {
        assert!((a - b).abs() < 1e-6);
    }
}

/// Distinct unit-norm per-location feature planes for correlation tests.
fn unit_features(c: usize, h: usize, w: usize, seed: u64) -> Vec<f32> {
    let raw = crate::gradcheck::kink_free_values(c * h * w, seed, 0.05);
    let mut out = vec![0.0f32; c * h * w];
    for p in 0..h * w {
        let norm: f32 = (0..c).map(|ci| raw[ci * h * w + p].powi(2)).sum::<f32>().sqrt();
        for ci in 0..c {
            out[ci * h * w + p] = raw[ci * h * w + p] / norm;
        }
    }
    out
}

#[test]
fn global_correlation_self_match_argmax() {
    let (c, h, w) = (8, 4, 4);
    let f = unit_features(c, h, w, 42);
    let mut g = Graph::new();
    let fs = g.leaf(t4(1, c, h, w, f.clone()), false).unwrap();
    let ft = g.leaf(t4(1, c, h, w, f), false).unwrap();
    let out = g.global_correlation(fs, ft).unwrap();
    assert_eq!(g.shape(out), &[1, h * w, h, w]);
    let d = g.data(out);
    for p in 0..h * w {
        assert_eq!(argmax_channel(d, h * w, h * w, p), p, "self-match at {p}");
    }
}

#[test]
fn global_correlation_recovers_cyclic_shift() {
    let (c, h, w) = (8, 4, 4);
    let f = unit_features(c, h, w, 7);
    // target = source cyclically shifted right by one column:
    // ft(i, (j+1) mod w) = fs(i, j), so fs(i,j) matches ft at (i, (j+1) mod w)
    let mut ftv = vec![0.0f32; c * h * w];
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                ftv[ci * h * w + i * w + (j + 1) % w] = f[ci * h * w + i * w + j];
            }
        }
    }
    let mut g = Graph::new();
    let fs = g.leaf(t4(1, c, h, w, f), false).unwrap();
    let ft = g.leaf(t4(1, c, h, w, ftv), false).unwrap();
    let out = g.global_correlation(fs, ft).unwrap();
    let d = g.data(out);
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            assert_eq!(argmax_channel(d, h * w, h * w, p), i * w + (j + 1) % w);
        }
    }
}

#[test]
fn global_correlation_orthogonal_features_vanish_off_match() {
    // one-hot channel per location cycle: distinct locations orthogonal
    let (c, h, w) = (16, 4, 4);
    let mut f = vec![0.0f32; c * h * w];
    for p in 0..h * w {
        f[p * h * w + p] = 1.0; // channel index == location index
    }
    let mut g = Graph::new();
    let fs = g.leaf(t4(1, c, h, w, f.clone()), false).unwrap();
    let ft = g.leaf(t4(1, c, h, w, f), false).unwrap();
    let out = g.global_correlation(fs, ft).unwrap();
    let d = g.data(out);
    for k in 0..h * w {
        for p in 0..h * w {
            let v = d[k * h * w + p];
            if k == p {
                assert!((v - 1.0).abs() < 1e-6);
            } else {
                assert!(v.abs() < 1e-7);
            }
        }
    }
}

#[test]
fn local_correlation_radius_zero_is_pointwise_dot() {
    let (c, h, w) = (6, 3, 5);
    let a = unit_features(c, h, w, 3);
    let b = unit_features(c, h, w, 4);
    let mut g = Graph::new();
    let fs = g.leaf(t4(1, c, h, w, a.clone()), false).unwrap();
    let ft = g.leaf(t4(1, c, h, w, b.clone()), false).unwrap();
    let out = g.local_correlation(fs, ft, 0).unwrap();
    assert_eq!(g.shape(out), &[1, 1, h, w]);
    for p in 0..h * w {
        let want: f32 = (0..c).map(|ci| a[ci * h * w + p] * b[ci * h * w + p]).sum();
        assert!((g.data(out)[p] - want).abs() < 1e-6);
    }
}

#[test]
fn local_correlation_identical_inputs_center_channel_is_one() {
    let (c, h, w) = (8, 4, 4);
    let f = unit_features(c, h, w, 9);
    let mut g = Graph::new();
    let fs = g.leaf(t4(1, c, h, w, f.clone()), false).unwrap();
    let ft = g.leaf(t4(1, c, h, w, f), false).unwrap();
    let out = g.local_correlation(fs, ft, 1).unwrap();
    assert_eq!(g.shape(out), &[1, 9, h, w]);
    let d = g.data(out);
    let center = 4; // (dy,dx)=(0,0)
    for p in 0..h * w {
        assert!((d[center * h * w + p] - 1.0).abs() < 1e-5);
    }
}

#[test]
fn local_correlation_shift_peaks_at_displacement_channel() {
    let (c, h, w) = (8, 4, 6);
    let f = unit_features(c, h, w, 21);
    // ft shifted: ft(i, j+1) = fs(i, j) -> best displacement dx=+1, dy=0 -> channel 5
    let mut ftv = vec![0.0f32; c * h * w];
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w - 1 {
                ftv[ci * h * w + i * w + j + 1] = f[ci * h * w + i * w + j];
            }
        }
    }
    let mut g = Graph::new();
    let fs = g.leaf(t4(1, c, h, w, f), false).unwrap();
    let ft = g.leaf(t4(1, c, h, w, ftv), false).unwrap();
    let out = g.local_correlation(fs, ft, 1).unwrap();
    let d = g.data(out);
    for i in 0..h {
        for j in 0..w - 1 {
            let p = i * w + j;
            assert_eq!(argmax_channel(d, 9, h * w, p), 5, "at ({i},{j})");
        }
    }
}

#[test]
fn grid_sample_identity_is_exact() {
    let vals = crate::gradcheck::kink_free_values(3 * 6 * 5, 5, 0.0);
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 3, 6, 5, vals.clone()), false).unwrap();
    let grid = g.leaf(identity_grid(6, 5), false).unwrap();
    let y = g.grid_sample(x, grid).unwrap();
    for (a, b) in g.data(y).iter().zip(&vals) {
        assert_eq!(a.to_bits(), b.to_bits(), "identity warp must be bit-exact");
    }
}

#[test]
fn grid_sample_corner_pin() {
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 1, 3, 3, (0..9).map(|i| i as f32).collect()), false).unwrap();
    let grid = g.leaf(t4(1, 2, 2, 2, vec![-1.0; 8]), false).unwrap();
    let y = g.grid_sample(x, grid).unwrap();
    assert!(g.data(y).iter().all(|v| *v == 0.0)); // top-left pixel value is 0
}

#[test]
fn grid_sample_integer_shift_matches_oracle() {
    let (h, w) = (4, 5);
    let vals = crate::gradcheck::kink_free_values(h * w, 13, 0.0);
    let mut grid = identity_grid(h, w);
    let du = 2.0 / (w as f64 - 1.0);
    for v in grid.data[..h * w].iter_mut() {
        *v = (*v as f64 + du) as f32; // sample one pixel to the right
    }
    let mut g = Graph::new();
    let x = g.leaf(t4(1, 1, h, w, vals.clone()), false).unwrap();
    let gid = g.leaf(grid, false).unwrap();
    let y = g.grid_sample(x, gid).unwrap();
    let d = g.data(y);
    for i in 0..h {
        for j in 0..w {
            let want = if j + 1 < w { vals[i * w + j + 1] } else { 0.0 };
            assert!((d[i * w + j] - want).abs() < 1e-5, "at ({i},{j})");
        }
    }
}

#[test]
fn backward_sum_gives_ones() {
    let mut g = Graph::new();
    let x = g.leaf(TensorData::new(vec![4], vec![0.3, -2.0, 5.0, 0.0]), true).unwrap();
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
}

#[test]
fn backward_relu_subgradient() {
    let mut g = Graph::new();
    let x = g.leaf(TensorData::new(vec![2], vec![-1.0, 2.0]), true).unwrap();
    let r = g.relu(x).unwrap();
    let s = g.sum(r).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn backward_accumulates_across_uses() {
    let mut g = Graph::new();
    let x = g.leaf(TensorData::new(vec![2], vec![1.5, -0.5]), true).unwrap();
    let y = g.add(x, x).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(TensorData::new(vec![2], vec![1.0, 2.0]), true).unwrap();
    assert!(matches!(g.backward(x), Err(TensorError::NotScalar)));
}

#[test]
fn non_finite_output_is_an_error() {
    let mut g = Graph::new();
    assert!(g.leaf(TensorData::new(vec![1], vec![f32::NAN]), false).is_err());
    let x = g.leaf(TensorData::new(vec![1], vec![1e38]), false).unwrap();
    let y = g.scale(x, 1e10).map(|_| ());
    assert!(matches!(y, Err(TensorError::NonFinite { .. })));
}

#[test]
fn masked_l1_closed_form_and_empty_mask() {
    let (h, w) = (3, 3);
    let id = identity_grid(h, w);
    let mut est = id.clone();
    for v in est.data.iter_mut() {
        *v += 0.1;
    }
    let mut g = Graph::new();
    let e = g.leaf(est, true).unwrap();
    let loss = g.masked_l1(e, &id.data, &vec![true; h * w]).unwrap();
    assert!((g.scalar_f64(loss).unwrap() - 0.2).abs() < 1e-6);
    // all-false mask -> 0 regardless of estimate
    let loss0 = g.masked_l1(e, &id.data, &vec![false; h * w]).unwrap();
    assert_eq!(g.scalar_f64(loss0).unwrap(), 0.0);
}

#[test]
fn bce_zero_logits_is_ln_two() {
    let mut g = Graph::new();
    let z = g.leaf(t4(1, 1, 2, 2, vec![0.0; 4]), false).unwrap();
    let l = g.bce_with_logits(z, &[1.0, 0.0, 1.0, 0.0]).unwrap();
    assert!((g.scalar_f64(l).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn bce_saturated_and_stable() {
    let mut g = Graph::new();
    let z = g.leaf(t4(1, 1, 1, 2, vec![20.0, -20.0]), false).unwrap();
    let l = g.bce_with_logits(z, &[1.0, 0.0]).unwrap();
    assert!(g.scalar_f64(l).unwrap() < 1e-6);
    // confidently wrong: finite, ~20 per pixel
    let z2 = g.leaf(t4(1, 1, 1, 1, vec![20.0]), false).unwrap();
    let l2 = g.bce_with_logits(z2, &[0.0]).unwrap();
    let v = g.scalar_f64(l2).unwrap();
    assert!(v.is_finite() && (v - 20.0).abs() < 1e-6);
}

#[test]
fn scalar_f64_flows_through_arithmetic() {
    let mut g = Graph::new();
    let x = g.leaf(TensorData::new(vec![3], vec![1.0, 2.0, 3.0]), false).unwrap();
    let s = g.sum(x).unwrap();
    let m = g.mean(x).unwrap();
    let a = g.add(s, m).unwrap();
    let b = g.scale(a, 0.5).unwrap();
    assert!((g.scalar_f64(b).unwrap() - 4.0).abs() < 1e-12);
}
