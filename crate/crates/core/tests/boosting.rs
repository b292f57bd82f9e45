use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcat::boosting::*;

fn rows(v: &[Vec<f32>]) -> Vec<&[f32]> {
    v.iter().map(|r| r.as_slice()).collect()
}

/// Two features; the label is the XOR of their signs.
fn xor_set() -> (Vec<Vec<f32>>, Vec<bool>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (a, b) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
        for k in 0..10 {
            let j = k as f32 * 0.01;
            x.push(vec![a * (1.0 + j), b * (1.0 + 2.0 * j)]);
            y.push((a > 0.0) != (b > 0.0));
        }
    }
    (x, y)
}

/// Lowest weighted error of any single-feature threshold, by exhaustive
/// search over every cut between observed values and both polarities.
fn best_stump_error(x: &[Vec<f32>], y: &[bool], w: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for f in 0..x[0].len() {
        let mut cuts: Vec<f32> = x.iter().map(|r| r[f]).collect();
        cuts.push(f32::NEG_INFINITY);
        cuts.push(f32::INFINITY);
        for &t in &cuts {
            for pol in [false, true] {
                let err: f64 = x
                    .iter()
                    .zip(y)
                    .zip(w)
                    .filter(|((r, &lab), _)| ((r[f] >= t) != pol) != lab)
                    .map(|(_, wi)| wi)
                    .sum();
                best = best.min(err);
            }
        }
    }
    best
}

fn toy(seed: u64, kind: u8) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 6;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    while pos.len() < 40 || neg.len() < 40 {
        let r: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let label = match kind {
            0 => r[2] > 0.1,
            1 => r[0] > 0.0 && r[3] < 0.3,
            _ => (r[1] > 0.0) != (r[4] > 0.0),
        };
        // a margin keeps the toys separable after quantization
        let near = (r[2] - 0.1).abs() < 0.05 || r[0].abs() < 0.05 || (r[3] - 0.3).abs() < 0.05 || r[1].abs() < 0.05 || r[4].abs() < 0.05;
        if near {
            continue;
        }
        if label && pos.len() < 40 {
            pos.push(r);
        } else if !label && neg.len() < 40 {
            neg.push(r);
        }
    }
    (pos, neg)
}

#[test]
fn xor_defeats_every_stump_but_not_a_depth_two_tree() {
    let (x, y) = xor_set();
    let w = vec![1.0 / x.len() as f64; x.len()];
    assert!((best_stump_error(&x, &y, &w) - 0.5).abs() < 1e-12);
    let data = QuantizedFeatures::new(&rows(&x)).unwrap();
    let (tree, stats) = train_tree(&data, &y, &w).unwrap();
    assert_eq!(stats.error, 0.0);
    for (r, &lab) in x.iter().zip(&y) {
        assert_eq!(tree.eval(r) > 0.0, lab);
    }
}

#[test]
fn loss_falls_every_round_on_20_datasets() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = |rng: &mut ChaCha8Rng, shift: f32| -> Vec<f32> { (0..8).map(|_| rng.gen_range(-1.0f32..1.0) + shift).collect() };
        let pos: Vec<Vec<f32>> = (0..60).map(|_| noisy(&mut rng, 0.3)).collect();
        let neg: Vec<Vec<f32>> = (0..90).map(|_| noisy(&mut rng, -0.1)).collect();
        let (trees, trace) = adaboost(&rows(&pos), &rows(&neg), 24).unwrap();
        assert_eq!(trees.len(), trace.losses.len());
        assert!(trace.losses[0] <= 1.0);
        for w in trace.losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "seed {seed}: {} -> {}", w[0], w[1]);
        }
        for e in &trace.errors {
            assert!(*e < 0.5);
        }
    }
}

#[test]
fn separable_toys_are_fit_within_16_trees() {
    for kind in 0..3u8 {
        for seed in 0..4u64 {
            let (pos, neg) = toy(seed, kind);
            let (trees, _) = adaboost(&rows(&pos), &rows(&neg), 16).unwrap();
            let f = |r: &[f32]| trees.iter().map(|t| t.eval(r)).sum::<f64>();
            let errors = pos.iter().filter(|r| f(r) <= 0.0).count() + neg.iter().filter(|r| f(r) > 0.0).count();
            assert_eq!(errors, 0, "toy {kind} seed {seed}");
        }
    }
}

#[test]
fn one_sided_data_is_rejected() {
    let pos = vec![vec![1.0f32, 2.0]];
    assert!(adaboost(&rows(&pos), &[], 4).is_err());
}

fn model_from(trees: Vec<DepthTwoTree>, n_features: usize) -> BoostedModel {
    // 8 x 4 cells x 10 channels = 320 features; the trees only touch the first few
    assert!(n_features <= 320);
    let k = trees.len();
    BoostedModel {
        version: MODEL_VERSION,
        trees,
        model_w: 32,
        model_h: 16,
        pad_w: 4,
        pad_h: 2,
        aspect: 0.4,
        cascade_thresholds: vec![f64::NEG_INFINITY; k],
        calib_min: -1.0,
        calib_max: 1.0,
        subcategory_id: 0,
        resolution_level: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn serialization_keeps_scores_bit_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<Vec<f32>> = (0..30).map(|_| (0..12).map(|_| rng.gen_range(0.0f32..1.0)).collect()).collect();
        let neg: Vec<Vec<f32>> = (0..30).map(|_| (0..12).map(|_| rng.gen_range(-0.5f32..0.7)).collect()).collect();
        let (trees, _) = adaboost(&rows(&pos), &rows(&neg), 8).unwrap();
        let mut m = model_from(trees, 12);
        m.cascade_thresholds = cascade_thresholds(&m.trees, &rows(&pos), 1.0, -40.0);
        m.validate().unwrap();
        let back = BoostedModel::from_json(&m.to_json().unwrap()).unwrap();
        let mut probe: Vec<f32> = vec![0.0; m.n_features()];
        for _ in 0..50 {
            for v in probe.iter_mut().take(12) {
                *v = rng.gen_range(-1.0f32..1.5);
            }
            prop_assert_eq!(m.score(&probe).to_bits(), back.score(&probe).to_bits());
            prop_assert_eq!(m.score_cascade(&probe).map(f64::to_bits), back.score_cascade(&probe).map(f64::to_bits));
        }
    }

    #[test]
    fn cascade_never_rejects_a_training_positive(seed in any::<u64>(), offset in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<Vec<f32>> = (0..40).map(|_| (0..5).map(|_| rng.gen_range(0.0f32..1.0)).collect()).collect();
        let neg: Vec<Vec<f32>> = (0..40).map(|_| (0..5).map(|_| rng.gen_range(-0.6f32..0.8)).collect()).collect();
        let (trees, _) = adaboost(&rows(&pos), &rows(&neg), 10).unwrap();
        let thr = cascade_thresholds(&trees, &rows(&pos), offset, -40.0);
        prop_assert_eq!(thr.len(), trees.len());
        let mut m = model_from(trees, 5);
        m.cascade_thresholds = thr;
        for p in &pos {
            let mut x = vec![0.0f32; m.n_features()];
            x[..5].copy_from_slice(p);
            let full = m.score(&x);
            prop_assert_eq!(m.score_cascade(&x), Some(full));
        }
        for t in &m.cascade_thresholds {
            prop_assert!(*t <= -40.0);
        }
    }

    #[test]
    fn quantized_bins_respect_thresholds(seed in any::<u64>(), n in 2usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f32>> = (0..n).map(|_| vec![rng.gen_range(-5.0f32..5.0), (rng.gen_range(0..4) as f32)]).collect();
        let q = QuantizedFeatures::new(&rows(&x)).unwrap();
        for f in 0..2 {
            let col = q.column(f);
            for (i, r) in x.iter().enumerate() {
                let b = col[i] as usize;
                // bin b holds values in [threshold(b - 1), threshold(b))
                if b > 0 {
                    prop_assert!(r[f] >= q.threshold(f, b - 1));
                }
                if b + 1 < N_BINS {
                    prop_assert!(r[f] < q.threshold(f, b) || q.threshold(f, b) == f32::MAX);
                }
            }
        }
    }
}
