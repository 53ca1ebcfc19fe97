use irview_core::data::{angular_distance, DayNight};
use irview_core::loss::mse;
use irview_core::silhouette::silhouette_score;
use irview_core::{
    denormalize_image, encode_pose, generate_pairs, normalize_image, split_train_test, SampleKey, IMAGE_PIXELS,
};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn regime(night: bool) -> DayNight {
    if night {
        DayNight::Night
    } else {
        DayNight::Day
    }
}

proptest! {
    #[test]
    fn quantization_round_trips(raw in prop::collection::vec(any::<u8>(), IMAGE_PIXELS)) {
        let img = normalize_image(&raw).unwrap();
        prop_assert!(img.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(denormalize_image(&img), raw);
    }

    #[test]
    fn pose_components_are_unit_circles(a in 0.0f64..360.0, b in 0.0f64..360.0, night: bool) {
        let p = encode_pose(a, b, regime(night)).unwrap().0;
        prop_assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-12);
        prop_assert!((p[2].hypot(p[3]) - 1.0).abs() < 1e-12);
        prop_assert_eq!(p[4], if night { 1.0 } else { 0.0 });
    }

    /// Rotating both azimuths leaves the relative part unchanged, across the
    /// 0/360 seam.
    #[test]
    fn relative_pose_is_rotation_invariant(a in 0u32..72, b in 0u32..72, shift in 0u32..72) {
        let deg = |k: u32| ((k % 72) * 5) as f64;
        let p = encode_pose(deg(a), deg(b), DayNight::Day).unwrap().0;
        let q = encode_pose(deg(a + shift), deg(b + shift), DayNight::Day).unwrap().0;
        prop_assert!((p[2] - q[2]).abs() < 1e-12 && (p[3] - q[3]).abs() < 1e-12);
    }

    #[test]
    fn angular_distance_is_a_symmetric_half_turn(a in 0.0f64..360.0, b in 0.0f64..360.0) {
        let d = angular_distance(a, b);
        prop_assert!((0.0..=180.0).contains(&d));
        prop_assert_eq!(d, angular_distance(b, a));
    }

    #[test]
    fn mse_is_nonnegative_and_symmetric(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..200)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let m = mse(&a, &b).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert_eq!(m, mse(&b, &a).unwrap());
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_leak_free(
        classes in 1u32..4,
        views in 4u32..16,
        seed: u64,
        fraction in 0.1f64..0.9,
    ) {
        let step = 360.0 / views as f64;
        let corpus: Vec<SampleKey> = (0..classes)
            .flat_map(|c| (0..views).map(move |v| SampleKey {
                class_id: c,
                azimuth_deg: v as f64 * step,
                day_night: DayNight::Day,
                range_m: 500.0,
            }))
            .collect();
        let pairs = generate_pairs(&corpus, step, 2.0 * step, false).unwrap();
        let (train, test) = split_train_test(&pairs, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), pairs.len());
        let key = |p: &irview_core::ViewPair| (p.input, p.target);
        let a: BTreeSet<_> = train.iter().map(key).collect();
        let b: BTreeSet<_> = test.iter().map(key).collect();
        prop_assert!(a.is_disjoint(&b));
        let ta: BTreeSet<_> = train.iter().map(|p| p.target).collect();
        prop_assert!(test.iter().all(|p| !ta.contains(&p.target)));
        prop_assert_eq!(split_train_test(&pairs, fraction, seed).unwrap(), (train, test));
    }

    #[test]
    fn silhouette_is_bounded(points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 6..40)) {
        let labels: Vec<u32> = (0..points.len()).map(|i| (i % 3) as u32).collect();
        if let Ok(s) = silhouette_score::<f64, _, _>(&points, &labels) {
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
