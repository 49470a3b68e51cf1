use super::essential::{epipolar_distances, essential_from_pose, fundamental_from_essential};
use super::scene::{inject_outliers, sample_pose_scene};
use super::*;
use crate::geometry::CorrespondenceMap;
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rotation_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Project a random non-planar point cloud into two views relating by
/// (R, t): the synthetic oracle every estimator test compares against.
fn synthetic_matches(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    cam: &CameraModel,
    n: usize,
    seed: u64,
) -> MatchSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ms = MatchSet::default();
    while ms.len() < n {
        let p = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(4.0..9.0));
        let q = r * p + t;
        if q[2] <= 0.1 {
            continue;
        }
        let a = [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy];
        let b = [cam.fx * q[0] / q[2] + cam.cx, cam.fy * q[1] / q[2] + cam.cy];
        ms.a.push(a);
        ms.b.push(b);
    }
    ms
}

fn test_cam() -> CameraModel {
    CameraModel::default_for(64, 64)
}

#[test]
fn matches_from_identity_map_pair_pixels() {
    let map = CorrespondenceMap::identity(16, 12);
    let ms = matches_from_map(&map, Confidence::None, 0.5, 2).unwrap();
    assert_eq!(ms.len(), 8 * 6);
    for (a, b) in ms.a.iter().zip(&ms.b) {
        assert!((a[0] - b[0]).abs() < 1e-4 && (a[1] - b[1]).abs() < 1e-4, "{a:?} vs {b:?}");
    }
}

#[test]
fn matches_respect_confidence_threshold() {
    let map = CorrespondenceMap::identity(16, 16);
    let mut probs = vec![0.95f32; 256];
    for p in 0..128 {
        probs[p] = 0.2;
    }
    let ms = matches_from_map(&map, Confidence::Probability(&probs), 0.9, 1).unwrap();
    assert_eq!(ms.len(), 128);

    let low = vec![0.2f32; 256];
    let err = matches_from_map(&map, Confidence::Probability(&low), 0.9, 1).unwrap_err();
    assert!(matches!(err, PoseError::TooFewMatches { .. }));
}

#[test]
fn matches_drop_out_of_bounds_targets() {
    let mut map = CorrespondenceMap::identity(16, 16);
    for j in 0..16 {
        let mut p = map.at(0, j);
        p[0] = 1.5; // off-frame
        map.set(0, j, p);
    }
    let ms = matches_from_map(&map, Confidence::None, 0.5, 1).unwrap();
    assert_eq!(ms.len(), 16 * 15);
}

#[test]
fn ransac_recovers_exact_essential() {
    let cam = test_cam();
    let r = rotation_z(5.0);
    let t = Vector3::new(0.4, -0.1, 0.2);
    let ms = synthetic_matches(&r, &t, &cam, 100, 3);
    let res = estimate_essential_ransac(&ms, &cam, &cam, &RansacParams::default()).unwrap();
    assert_eq!(res.inlier_count, 100);
    let e = res.essential / res.essential.norm();
    for (a, b) in ms.a.iter().zip(&ms.b) {
        let xa = cam.normalize(*a);
        let xb = cam.normalize(*b);
        let v = Vector3::new(xb[0], xb[1], 1.0).dot(&(e * Vector3::new(xa[0], xa[1], 1.0)));
        assert!(v.abs() < 1e-8, "constraint residual {v}");
    }
    // essential manifold invariants on the unit-Frobenius matrix
    assert!(e.determinant().abs() < 1e-9);
    let ee_t = e * e.transpose();
    let manifold = 2.0 * ee_t * e - ee_t.trace() * e;
    assert!(manifold.norm() < 1e-8, "manifold residual {}", manifold.norm());
}

#[test]
fn ransac_separates_outliers() {
    let cam = test_cam();
    let r = rotation_z(4.0);
    let t = Vector3::new(0.3, 0.2, -0.1);
    let mut ms = synthetic_matches(&r, &t, &cam, 100, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // corrupt the last 30
    for i in 70..100 {
        ms.b[i] = [rng.gen_range(0.0..63.0), rng.gen_range(0.0..63.0)];
    }
    let res = estimate_essential_ransac(&ms, &cam, &cam, &RansacParams::default()).unwrap();
    let true_in = res.inliers[..70].iter().filter(|v| **v).count();
    assert!(true_in >= 67, "recovered only {true_in}/70 true inliers");
    // a stray outlier sitting on an epipolar line can join the refit, so
    // the pose bound matches the 30%-outlier tolerance, not the clean one
    let (rot, trans) = recover_pose(&res.essential, &ms, &cam, &cam).unwrap();
    let (er, _) = pose_errors(&rot, &trans, &r, &t);
    assert!(er < 2.0, "rot {er} deg");
}

#[test]
fn ransac_is_seed_deterministic_and_monotone_in_restarts() {
    let cam = test_cam();
    let r = rotation_z(6.0);
    let t = Vector3::new(-0.2, 0.3, 0.1);
    let mut ms = synthetic_matches(&r, &t, &cam, 80, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 60..80 {
        ms.b[i] = [rng.gen_range(0.0..63.0), rng.gen_range(0.0..63.0)];
    }
    let p1 = RansacParams { iters: 50, restarts: 1, ..Default::default() };
    let p5 = RansacParams { iters: 50, restarts: 5, ..Default::default() };
    let a = estimate_essential_ransac(&ms, &cam, &cam, &p1).unwrap();
    let b = estimate_essential_ransac(&ms, &cam, &cam, &p1).unwrap();
    assert_eq!(a.essential, b.essential);
    assert_eq!(a.inliers, b.inliers);
    let c = estimate_essential_ransac(&ms, &cam, &cam, &p5).unwrap();
    assert!(c.inlier_count >= a.inlier_count);
}

#[test]
fn recover_pose_canonical_x_translation() {
    let cam = test_cam();
    let r = Matrix3::identity();
    let t = Vector3::new(1.0, 0.0, 0.0);
    let ms = synthetic_matches(&r, &t, &cam, 60, 21);
    let e = essential_from_pose(&r, &t);
    let (rot, trans) = recover_pose(&e, &ms, &cam, &cam).unwrap();
    assert!((rot - Matrix3::identity()).norm() < 1e-6);
    assert!((trans - t).norm() < 1e-6, "t = {trans:?}");
    // negated essential resolves to the same motion through cheirality
    let (rot2, trans2) = recover_pose(&(-e), &ms, &cam, &cam).unwrap();
    assert!((rot2 - rot).norm() < 1e-9);
    assert!((trans2 - trans).norm() < 1e-9);
}

#[test]
fn recover_pose_from_exact_essential_is_subdegree() {
    let cam = test_cam();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..10 {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let angle: f64 = rng.gen_range(2.0..10.0);
        let k = skew(&axis.normalize());
        let r = Matrix3::identity() + k * angle.to_radians().sin() + k * k * (1.0 - angle.to_radians().cos());
        let t = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.4..0.4)).normalize()
            * 0.5;
        let ms = synthetic_matches(&r, &t, &cam, 80, 100 + trial);
        let e = essential_from_pose(&r, &t);
        let (rot, trans) = recover_pose(&e, &ms, &cam, &cam).unwrap();
        let (er, et) = pose_errors(&rot, &trans, &r, &t);
        assert!(er < 1e-3 && et < 1e-3, "trial {trial}: rot {er} deg trans {et} deg");
    }
}

#[test]
fn pose_error_conventions() {
    let r = rotation_z(33.0);
    let t = Vector3::new(0.3, -0.4, 0.5);
    let (er, et) = pose_errors(&r, &t, &r, &t);
    assert_eq!(er, 0.0);
    assert!(et < 1e-5, "self translation error {et}");

    let r2 = r * rotation_z(10.0);
    let (er, _) = pose_errors(&r2, &t, &r, &t);
    assert!((er - 10.0).abs() < 1e-9, "{er}");
    let (er_sym, _) = pose_errors(&r, &t, &r2, &t);
    assert!((er - er_sym).abs() < 1e-12);

    let (_, et) = pose_errors(&r, &(-t), &r, &t);
    assert!(et.abs() < 1e-5, "sign flip should be free: {et}");
}

#[test]
fn epipolar_distance_hand_case_and_scaling() {
    // F (1,0,0)<->(0,0,1) swap: for x = (0, a), the line in B is x=0 and
    // the back-projected line for x' = (3, b) is x=-3: both distances 3.
    let f = Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let ms = MatchSet { a: vec![[0.0, 5.0]], b: vec![[3.0, 7.0]], confidence: None };
    let (d, summary) = symmetric_epipolar_error(&ms, &f);
    assert!((d[0] - 3.0).abs() < 1e-9);
    assert!((summary.median - 3.0).abs() < 1e-9);
    for s in [2.0, -5.0, 1e-3] {
        let (ds, _) = symmetric_epipolar_error(&ms, &(f * s));
        assert!((ds[0] - 3.0).abs() < 1e-9, "scale {s}");
    }
}

#[test]
fn epipolar_distance_zero_on_exact_matches() {
    let cam = test_cam();
    let r = rotation_z(7.0);
    let t = Vector3::new(0.2, 0.1, 0.3);
    let ms = synthetic_matches(&r, &t, &cam, 50, 41);
    let f = fundamental_from_essential(&essential_from_pose(&r, &t), &cam, &cam);
    let (d, summary) = symmetric_epipolar_error(&ms, &f);
    assert!(d.iter().all(|v| *v < 1e-9));
    assert_eq!(summary.cumulative.last().unwrap().1, 1.0);
}

#[test]
fn degenerate_epipolar_lines_report_infinity() {
    // rank-1 F sending everything to a line with a=b=0
    let f = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let ms = MatchSet { a: vec![[1.0, 2.0]], b: vec![[3.0, 4.0]], confidence: None };
    let (d, summary) = symmetric_epipolar_error(&ms, &f);
    assert!(d[0].is_infinite());
    assert!(summary.median.is_infinite());
}

#[test]
fn scene_map_satisfies_gt_epipolar_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scene = sample_pose_scene(&mut rng, 64, 64);
    let ms = matches_from_map(&scene.map, Confidence::Mask(&scene.mask), 0.5, 2).unwrap();
    let f = fundamental_from_essential(
        &essential_from_pose(&scene.rotation, &scene.translation),
        &scene.camera,
        &scene.camera,
    );
    let d = epipolar_distances(&ms, &f);
    let max = d.iter().cloned().fold(0.0, f64::max);
    // map coordinates are f32-quantized; a few 1e-4 px of slack
    assert!(max < 1e-3, "max epipolar distance {max}");
}

#[test]
fn scene_geometric_chain_recovers_pose() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..5 {
        let scene = sample_pose_scene(&mut rng, 64, 64);
        let ms = matches_from_map(&scene.map, Confidence::Mask(&scene.mask), 0.5, 2).unwrap();
        let res = estimate_essential_ransac(&ms, &scene.camera, &scene.camera, &RansacParams::default()).unwrap();
        let (rot, trans) = recover_pose(&res.essential, &ms, &scene.camera, &scene.camera).unwrap();
        let (er, et) = pose_errors(&rot, &trans, &scene.rotation, &scene.translation);
        assert!(er < 0.1 && et < 0.5, "trial {trial}: rot {er} trans {et}");
    }
}

#[test]
fn scene_chain_survives_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let scene = sample_pose_scene(&mut rng, 64, 64);
    let mut ms = matches_from_map(&scene.map, Confidence::Mask(&scene.mask), 0.5, 2).unwrap();
    inject_outliers(&mut ms, 0.3, 64, 64, &mut rng);
    let res = estimate_essential_ransac(&ms, &scene.camera, &scene.camera, &RansacParams::default()).unwrap();
    let (rot, trans) = recover_pose(&res.essential, &ms, &scene.camera, &scene.camera).unwrap();
    let (er, _) = pose_errors(&rot, &trans, &scene.rotation, &scene.translation);
    assert!(er < 2.0, "rot err {er} deg with 30% outliers");
}

#[test]
fn scene_render_is_photometrically_consistent() {
    use crate::geometry::map_to_tensor;
    use crate::geometry::synth::generate_base;
    use crate::tensor::Graph;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let scene = sample_pose_scene(&mut rng, 64, 64);
    let base = generate_base(&mut rng, 128, 128);
    let (source, target) = scene.render(&base);
    let mut g = Graph::new();
    let src = g.leaf(source.to_tensor(), false).unwrap();
    let grid = g.leaf(map_to_tensor(&scene.map), false).unwrap();
    let warped = g.grid_sample(src, grid).unwrap();
    let wd = g.data(warped);
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for i in 2..62 {
        for j in 2..62 {
            // skip anything near the mask boundary or the plane seam
            let mut ok = true;
            'er: for di in -2i32..=2 {
                for dj in -2i32..=2 {
                    let (y, x) = ((i as i32 + di) as usize, (j as i32 + dj) as usize);
                    if !scene.mask.data[y * 64 + x] || scene.region[y * 64 + x] != scene.region[i * 64 + j] {
                        ok = false;
                        break 'er;
                    }
                }
            }
            if !ok {
                continue;
            }
            for c in 0..3 {
                acc += (wd[(c * 64 + i) * 64 + j] as f64 - target.at(c, i, j) as f64).abs();
                n += 1;
            }
        }
    }
    let err = acc / n as f64;
    assert!(err < 0.02, "photometric error {err}");
}

#[test]
fn pose_file_roundtrip() {
    use super::scene::{read_pose_file, write_pose_file};
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let scene = sample_pose_scene(&mut rng, 32, 32);
    let path = std::env::temp_dir().join(format!("dgc_pose_{}.txt", std::process::id()));
    write_pose_file(&path, &scene).unwrap();
    let gt = read_pose_file(&path).unwrap();
    assert_eq!(gt.camera, scene.camera);
    assert!((gt.rotation - scene.rotation).norm() < 1e-15);
    assert!((gt.translation - scene.translation).norm() < 1e-15);
    std::fs::remove_file(&path).ok();
}
