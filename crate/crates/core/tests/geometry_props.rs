//! Property tests for the geometric transform invariants.

use dgc_core::geometry::{
    compose, gt_correspondence_map, sample_transform, GeometricTransform, TransformKind,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kinds() -> impl Strategy<Value = TransformKind> {
    prop_oneof![
        Just(TransformKind::Affine),
        Just(TransformKind::Homography),
        Just(TransformKind::Tps),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_roundtrip(seed in any::<u64>(), kind in kinds(),
                         strength in 0.05f64..0.4,
                         px in -1.0f64..1.0, py in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_transform(kind, &mut rng, strength).unwrap();
        let q = t.apply([px, py]).unwrap();
        // stay clear of wildly extrapolated regions for the numeric inverse
        prop_assume!(q[0].abs() <= 1.5 && q[1].abs() <= 1.5);
        let back = t.inverse_point(q).unwrap();
        let err = (back[0] - px).hypot(back[1] - py);
        let tol = match kind {
            TransformKind::Tps => 1e-4,
            _ => 1e-9,
        };
        prop_assert!(err < tol, "{kind:?} roundtrip error {err}");
    }

    #[test]
    fn composition_of_gt_maps(seed in any::<u64>(), sa in 0.05f64..0.3, sb in 0.05f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t1 = sample_transform(TransformKind::Affine, &mut rng, sa).unwrap();
        let t2 = sample_transform(TransformKind::Homography, &mut rng, sb).unwrap();
        let comp = compose(&t2, &t1).unwrap();
        let (w, h) = (8, 8);
        let (m1, k1) = gt_correspondence_map(&t1, w, h).unwrap();
        let (mc, kc) = gt_correspondence_map(&comp, w, h).unwrap();
        for i in 0..h {
            for j in 0..w {
                if !(k1.data[i * w + j] && kc.data[i * w + j]) {
                    continue;
                }
                let via = t2.apply(m1.at(i, j)).unwrap();
                let direct = mc.at(i, j);
                let err = (via[0] - direct[0]).hypot(via[1] - direct[1]);
                prop_assert!(err < 1e-6, "at ({i},{j}): {err}");
            }
        }
    }

    #[test]
    fn identity_mask_is_full(w in 2usize..20, h in 2usize..20) {
        let (_, mask) = gt_correspondence_map(&GeometricTransform::identity(), w, h).unwrap();
        prop_assert_eq!(mask.valid_count(), w * h);
    }
}
