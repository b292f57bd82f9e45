mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcat::annotations::wrap_angle;
use subcat::linear_models::SvmParams;
use subcat::orientation::*;

use common::{det, similarity_oracle};

/// Score vectors from `k` view-tuned detectors: detector `j` fires most
/// strongly near angle `centers[j]`.
fn view_tuned(seed: u64, k: usize, n: usize) -> Vec<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = bin_centers(k);
    (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(-PI..PI);
            let v = centers.iter().map(|c| (a - c).cos().max(0.0) + rng.gen_range(0.0..0.05)).collect();
            (v, a)
        })
        .collect()
}

#[test]
fn classifier_recovers_view_bins() {
    let train = view_tuned(1, 8, 400);
    let test = view_tuned(2, 8, 100);
    let m = train_orientation(&train, 8, OrientationKind::MulticlassSvm, 8, &SvmParams::default()).unwrap();
    let good = test
        .iter()
        .filter(|(v, a)| wrap_angle(m.estimate(v).unwrap() - a).abs() <= PI / 8.0 + 0.2)
        .count();
    assert!(good >= 90, "{good}/100 within a bin");
    let back = OrientationModel::from_json(&m.to_json().unwrap()).unwrap();
    for (v, _) in &test {
        assert_eq!(m.estimate(v).unwrap().to_bits(), back.estimate(v).unwrap().to_bits());
    }
    assert!(m.estimate(&[0.0; 3]).is_err());
}

#[test]
fn regressor_recovers_angles() {
    let train = view_tuned(3, 8, 400);
    let test = view_tuned(4, 8, 100);
    let m = train_orientation(&train, 8, OrientationKind::Svr, 0, &SvmParams::default()).unwrap();
    let mean_err: f64 = test.iter().map(|(v, a)| wrap_angle(m.estimate(v).unwrap() - a).abs()).sum::<f64>() / 100.0;
    assert!(mean_err < 0.35, "mean error {mean_err}");
}

#[test]
fn training_errors() {
    let p = SvmParams::default();
    assert!(train_orientation(&[], 2, OrientationKind::Svr, 0, &p).is_err());
    let same_bin = vec![(vec![1.0, 0.0], 0.1), (vec![0.0, 1.0], 0.12)];
    assert!(train_orientation(&same_bin, 2, OrientationKind::MulticlassSvm, 4, &p).is_err());
    assert!(train_orientation(&[(vec![1.0], 0.0)], 2, OrientationKind::Svr, 0, &p).is_err());
}

#[test]
fn score_vector_takes_each_models_best_overlapping_box() {
    let target = det(0.0, 0.0, 10.0, 10.0, 1.0);
    let per_model = vec![
        vec![det(0.0, 0.0, 10.0, 10.0, 2.0), det(1.0, 0.0, 11.0, 10.0, 4.0), det(50.0, 0.0, 60.0, 10.0, 9.0)],
        vec![det(6.0, 0.0, 16.0, 10.0, 3.0)],
    ];
    let v = score_vector(&target, &per_model, &[(0.0, 8.0), (0.0, 1.0)]).unwrap();
    assert_eq!(v.values, vec![0.5, 0.0]);
    assert!(score_vector(&target, &per_model, &[(0.0, 1.0)]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bins_tile_the_circle(n in 2usize..40, a in -10.0f64..10.0) {
        let c = bin_centers(n);
        let b = angle_bin(a, n);
        prop_assert!(b < n);
        // the assigned center is within half a bin of the angle
        prop_assert!(wrap_angle(a - c[b]).abs() <= PI / n as f64 + 1e-9);
        for w in c.windows(2) {
            prop_assert!((w[1] - w[0] - 2.0 * PI / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_is_bounded_periodic_and_penalizes_unassigned(
        pairs in prop::collection::vec((-7.0f64..7.0, any::<bool>()), 1..30),
        wraps in prop::collection::vec(-2i32..3, 30)
    ) {
        let n = pairs.len();
        let s = orientation_similarity(&pairs, n).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((s - similarity_oracle(&pairs, n)).abs() <= 1e-12);
        let shifted: Vec<(f64, bool)> = pairs.iter().zip(&wraps).map(|((t, d), k)| (t + 2.0 * PI * *k as f64, *d)).collect();
        prop_assert!((orientation_similarity(&shifted, n).unwrap() - s).abs() <= 1e-9);
        // dropping unassigned detections (and their denominator share) helps
        let assigned: Vec<(f64, bool)> = pairs.iter().copied().filter(|p| p.1).collect();
        if assigned.len() < n && !assigned.is_empty() {
            let kept = orientation_similarity(&assigned, assigned.len()).unwrap();
            prop_assert!(kept > s || (s == 0.0 && kept == 0.0));
        }
    }

    #[test]
    fn duplicated_samples_keep_their_prediction(seed in 0u64..1000) {
        let train = view_tuned(seed, 6, 120);
        let p = SvmParams::default();
        let m = train_orientation(&train, 6, OrientationKind::MulticlassSvm, 6, &p).unwrap();
        let v = &train[0].0;
        let once = m.estimate(v).unwrap();
        let twice: Vec<f64> = (0..2).map(|_| m.estimate(v).unwrap()).collect();
        prop_assert_eq!(twice, vec![once, once]);
    }
}
