//! Acceptance harness. Prints one PASS/FAIL/SKIP line per criterion and
//! exits nonzero when any criterion fails.
//!
//! Criterion 10 runs only when `SUBCAT_KITTI_DIR` points at a KITTI-layout
//! training split (`image_2/`, `label_2/`); `SUBCAT_KITTI_TEST_DIR`
//! optionally names a separate split to evaluate on.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subcat::annotations::{occlusion_level, Annotation3D, Occlusion};
use subcat::bbox::{overlap, BBox2D, OverlapMode};
use subcat::boosting::{adaboost, train_tree, ModelBundle, QuantizedFeatures};
use subcat::channels::*;
use subcat::clustering::*;
use subcat::detector::{nms_greedy, Detection};
use subcat::evaluation::*;
use subcat::image::{Image, Plane};
use subcat::linalg::jacobi_eigen;
use subcat::pipeline::*;
use subcat::synth::{write_split, SynthSpec};

use common::*;

// Tolerances and targets, frozen after the reference run.
const GEOMETRY_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-6;
const INSTANCES: usize = 1000;
const CONSERVATION_TOL: f32 = 1e-6;
const EIGEN_RESIDUAL: f64 = 1e-6;
const MIN_ARI: f64 = 0.95;
const MIN_AP: f64 = 0.90;
const MIN_AOS_RATIO: f64 = 0.90;
const MAX_K20_SLOWDOWN: f64 = 4.0;

/// Boosting rounds per mining stage for the end-to-end runs.
const SCHEDULE: &str = "[32,128,256]";
const MINING_ROUNDS: &str = "2";

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn workers<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Budgets stated for an 8-core desktop, stretched on smaller machines.
fn desktop_budget(minutes: f64) -> Duration {
    Duration::from_secs_f64(minutes * 60.0 * (8.0 / cores() as f64).max(1.0))
}

fn minutes(m: f64) -> Duration {
    Duration::from_secs_f64(m * 60.0)
}

// ---------------------------------------------------------------- 1

fn int_box(rng: &mut ChaCha8Rng) -> BBox2D {
    let (x, y) = (rng.gen_range(0..30), rng.gen_range(0..30));
    let (w, h) = (rng.gen_range(1..25), rng.gen_range(1..25));
    BBox2D::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap()
}

fn random_scene(rng: &mut ChaCha8Rng) -> (Vec<Annotation3D>, Vec<EvalDetection>) {
    let grid = |rng: &mut ChaCha8Rng| {
        let (x, y) = (rng.gen_range(0..8u32), rng.gen_range(0..4u32));
        let (w, h) = (rng.gen_range(2..8u32), rng.gen_range(2..6u32));
        BBox2D::new(x as f64 * 10.0, y as f64 * 10.0, (x + w) as f64 * 10.0, (y + h) as f64 * 10.0).unwrap()
    };
    let gts = (0..rng.gen_range(0..5))
        .map(|_| {
            let mut a = car(grid(rng), 0.0);
            a.occlusion = Occlusion::from_index(rng.gen_range(0..4)).unwrap();
            a.truncation = rng.gen_range(0..3) as f64 * 0.2;
            a
        })
        .collect();
    let mut dets: Vec<EvalDetection> = (0..rng.gen_range(0..8))
        .map(|_| EvalDetection { bbox: grid(rng), score: rng.gen_range(0..20) as f64, alpha: Some(rng.gen_range(-PI..PI)) })
        .collect();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    (gts, dets)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 5];
    for _ in 0..INSTANCES {
        let (a, b) = (int_box(&mut rng), int_box(&mut rng));
        for mode in [OverlapMode::IoU, OverlapMode::IoMin] {
            worst[0] = worst[0].max((overlap(&a, &b, mode) - pixel_overlap(&a, &b, mode)).abs());
        }
        worst[1] = worst[1].max((occlusion_level(&a, &b) - pixel_occlusion(&a, &b)).abs());

        let n = rng.gen_range(1..30);
        let pairs: Vec<(f64, bool)> = (0..rng.gen_range(0..=n)).map(|_| (rng.gen_range(-7.0..7.0), rng.gen_bool(0.7))).collect();
        let s = orientation_similarity(&pairs, n).map_err(|e| e.to_string())?;
        worst[2] = worst[2].max((s - similarity_oracle(&pairs, n)).abs());
    }
    let settings = EvalSettings::moderate();
    let mut scored = 0;
    while scored < INSTANCES {
        let scenes: Vec<_> = (0..rng.gen_range(1..6)).map(|_| random_scene(&mut rng)).collect();
        let reports: Vec<MatchReport> = scenes
            .iter()
            .map(|(g, d)| match_detections(d, g, "Car", &settings).unwrap())
            .collect();
        let mut flat = Vec::new();
        for r in &reports {
            for (s, f) in r.scores.iter().zip(&r.det_flags) {
                match f {
                    DetFlag::TruePositive => flat.push((*s, true)),
                    DetFlag::FalsePositive => flat.push((*s, false)),
                    DetFlag::Ignored => {}
                }
            }
        }
        let n_gt: usize = reports.iter().map(|r| r.n_evaluated()).sum();
        if n_gt == 0 {
            continue;
        }
        scored += 1;
        let c = pr_curve(&reports, scenes.len(), Interpolation::Points41).map_err(|e| e.to_string())?;
        worst[3] = worst[3].max((c.ap - ap_oracle(&flat, n_gt, 41)).abs());
        let m = miss_rate_at_fppi(&c, 0.1);
        worst[4] = worst[4].max((m - miss_rate_oracle(&flat, n_gt, scenes.len(), 0.1)).abs());
    }
    let names = ["overlap", "occlusion", "similarity", "AP", "miss rate"];
    let tols = [GEOMETRY_TOL, GEOMETRY_TOL, METRIC_TOL, METRIC_TOL, METRIC_TOL];
    for i in 0..5 {
        ensure(worst[i] <= tols[i], || format!("{} off by {:e}", names[i], worst[i]))?;
    }
    Ok(format!(
        "{INSTANCES} instances each; max errors overlap {:.1e}, occlusion {:.1e}, similarity {:.1e}, AP {:.1e}, miss rate {:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
    let b = det(4.0, 0.0, 14.0, 10.0, 0.8);
    let c = det(8.0, 0.0, 18.0, 10.0, 0.7);
    let kept = nms_greedy(&[c.clone(), a.clone(), b], 0.3, OverlapMode::IoU);
    let boxes: Vec<BBox2D> = kept.iter().map(|d| d.bbox).collect();
    ensure(boxes == vec![a.bbox, c.bbox], || format!("chain case kept {boxes:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let same = |p: &[Detection], q: &[Detection]| p.len() == q.len() && p.iter().zip(q).all(|(x, y)| x.bbox == y.bbox && x.score == y.score);
    for case in 0..INSTANCES {
        let n = rng.gen_range(0..=50);
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                let (x, y) = (rng.gen_range(0..60) as f64, rng.gen_range(0..60) as f64);
                det(x, y, x + rng.gen_range(4..40) as f64, y + rng.gen_range(4..40) as f64, rng.gen_range(0..8) as f64 * 0.125)
            })
            .collect();
        let thr = rng.gen_range(0.05..0.9);
        let mode = if rng.gen_bool(0.5) { OverlapMode::IoU } else { OverlapMode::IoMin };
        ensure(same(&nms_greedy(&dets, thr, mode), &nms_reference(&dets, thr, mode)), || format!("set {case} differs"))?;
    }
    Ok(format!("chain case plus {INSTANCES} random sets match the reference"))
}

// ---------------------------------------------------------------- 3

fn uniform(rng: &mut ChaCha8Rng, n: usize, d: usize, source: FeatureSource) -> FeatureMatrix {
    FeatureMatrix::new((0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(), source).unwrap()
}

fn criterion_3() -> Outcome {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, 60 + seed as usize % 40, 3, FeatureSource::Visual);
        let m = kmeans(&x, 2 + seed as usize % 6, seed, 100).map_err(|e| e.to_string())?;
        for w in m.objective_trace.windows(2) {
            ensure(w[1] <= w[0] + 1e-9 * w[0].abs(), || format!("k-means seed {seed}: {} -> {}", w[0], w[1]))?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut blob = |centers: &[[f64; 3]], per: usize, spread: f64| {
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, m) in centers.iter().enumerate() {
            for _ in 0..per {
                rows.push(m.iter().map(|v| v + rng.gen_range(-spread..spread)).collect());
                truth.push(c);
            }
        }
        (FeatureMatrix::new(rows, FeatureSource::Geometric).unwrap(), truth)
    };
    let (x, _) = blob(&[[0.0, 0.0, 0.0], [3.0, 0.0, 1.0], [0.0, 4.0, 2.0]], 40, 1.2);
    let n = x.n();
    let w = gaussian_affinity(&x.rows, median_pairwise_distance(&x.rows));
    let emb = spectral_embedding(&w, n, 3).map_err(|e| e.to_string())?;
    let l = &emb.laplacian;
    let jac = jacobi_eigen(l, n);
    let min_eig = jac.values.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(min_eig >= -1e-9, || format!("Laplacian eigenvalue {min_eig}"))?;
    let mut worst_res = 0.0f64;
    for (j, v) in emb.eigen.vectors.iter().enumerate() {
        let r: f64 = (0..n)
            .map(|i| ((0..n).map(|c| l[i * n + c] * v[c]).sum::<f64>() - emb.eigen.values[j] * v[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        worst_res = worst_res.max(r);
    }
    ensure(worst_res <= EIGEN_RESIDUAL, || format!("eigenpair residual {worst_res:e}"))?;

    let (x, truth) = blob(&[[0.0, 0.0, 0.0], [6.0, 1.0, 0.0]], 80, 1.0);
    let cfg = SpectralConfig::median_heuristic(&x, 2).map_err(|e| e.to_string())?;
    let ari = adjusted_rand_index(&spectral_cluster(&x, &cfg, 3).map_err(|e| e.to_string())?.assignments, &truth);
    ensure(ari >= MIN_ARI, || format!("two-blob ARI {ari}"))?;

    let mut dsc_runs = 0;
    for seed in 0..60u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let n = rng.gen_range(20..80);
        let k = rng.gen_range(2..6);
        let req = if rng.gen_bool(0.5) { Some(rng.gen_range(1..40)) } else { None };
        let pos = uniform(&mut rng, n, 3, FeatureSource::Visual);
        let neg = uniform(&mut rng, 40, 3, FeatureSource::Visual);
        let init = kmeans(&pos, k, seed, 50).map_err(|e| e.to_string())?;
        let m = dsc(&pos, &neg, k, &init, &DscConfig { rounds: 3, m_min: req, ..DscConfig::default() }).map_err(|e| e.to_string())?;
        let min = dsc_min_size(n, k, req);
        let mut sizes = vec![0usize; k];
        for &a in &m.assignments {
            sizes[a] += 1;
        }
        ensure(sizes.iter().all(|&s| s >= min), || format!("DSC seed {seed}: sizes {sizes:?} below {min}"))?;
        dsc_runs += 1;
    }
    Ok(format!(
        "100 k-means runs monotone; min eigenvalue {min_eig:.1e}, residual {worst_res:.1e}; ARI {ari:.3}; {dsc_runs} DSC runs respect the size floor"
    ))
}

// ---------------------------------------------------------------- 4

fn rows(v: &[Vec<f32>]) -> Vec<&[f32]> {
    v.iter().map(|r| r.as_slice()).collect()
}

fn criterion_4() -> Outcome {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noisy = |shift: f32| -> Vec<f32> { (0..8).map(|_| rng.gen_range(-1.0f32..1.0) + shift).collect() };
        let pos: Vec<Vec<f32>> = (0..60).map(|_| noisy(0.3)).collect();
        let neg: Vec<Vec<f32>> = (0..90).map(|_| noisy(-0.1)).collect();
        let (_, trace) = adaboost(&rows(&pos), &rows(&neg), 24).map_err(|e| e.to_string())?;
        for w in trace.losses.windows(2) {
            ensure(w[1] <= w[0] * (1.0 + 1e-12), || format!("dataset {seed}: loss {} -> {}", w[0], w[1]))?;
        }
    }

    // XOR of two signs: no threshold on one feature beats chance
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (a, b) in [(-1.0f32, -1.0f32), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
        for k in 0..10 {
            let j = k as f32 * 0.01;
            x.push(vec![a * (1.0 + j), b * (1.0 + 2.0 * j)]);
            y.push((a > 0.0) != (b > 0.0));
        }
    }
    let w = vec![1.0 / x.len() as f64; x.len()];
    let mut stump = f64::INFINITY;
    for f in 0..2 {
        let mut cuts: Vec<f32> = x.iter().map(|r| r[f]).collect();
        cuts.extend([f32::NEG_INFINITY, f32::INFINITY]);
        for &t in &cuts {
            for flip in [false, true] {
                let err: f64 = x.iter().zip(&y).zip(&w).filter(|((r, &lab), _)| ((r[f] >= t) != flip) != lab).map(|(_, v)| v).sum();
                stump = stump.min(err);
            }
        }
    }
    ensure((stump - 0.5).abs() < 1e-12, || format!("best stump error {stump}"))?;
    let q = QuantizedFeatures::new(&rows(&x)).map_err(|e| e.to_string())?;
    let (tree, _) = train_tree(&q, &y, &w).map_err(|e| e.to_string())?;
    let wrong = x.iter().zip(&y).filter(|(r, &lab)| (tree.eval(r) > 0.0) != lab).count();
    ensure(wrong == 0, || format!("depth-2 tree misclassifies {wrong} XOR points"))?;

    let mut fitted = 0;
    for kind in 0..3u8 {
        for seed in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            while pos.len() < 40 || neg.len() < 40 {
                let r: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                let (label, margin) = match kind {
                    0 => (r[2] > 0.1, (r[2] - 0.1).abs()),
                    1 => (r[0] > 0.0 && r[3] < 0.3, r[0].abs().min((r[3] - 0.3).abs())),
                    _ => ((r[1] > 0.0) != (r[4] > 0.0), r[1].abs().min(r[4].abs())),
                };
                if margin < 0.05 {
                    continue;
                }
                if label && pos.len() < 40 {
                    pos.push(r);
                } else if !label && neg.len() < 40 {
                    neg.push(r);
                }
            }
            let (trees, _) = adaboost(&rows(&pos), &rows(&neg), 16).map_err(|e| e.to_string())?;
            let f = |r: &[f32]| trees.iter().map(|t| t.eval(r)).sum::<f64>();
            let errors = pos.iter().filter(|r| f(r) <= 0.0).count() + neg.iter().filter(|r| f(r) > 0.0).count();
            ensure(errors == 0, || format!("toy {kind}/{seed}: {errors} training errors after 16 trees"))?;
            fitted += 1;
        }
    }
    Ok(format!("20 datasets with falling loss; best stump on XOR {stump:.2}, tree 0 errors; {fitted} toys fit"))
}

// ---------------------------------------------------------------- 5

fn textured(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(w, h).unwrap();
    for y in 0..h {
        for x in 0..w {
            img.set(x, y, [rng.gen_range(0.3..0.5), rng.gen_range(0.3..0.5), rng.gen_range(0.3..0.5)]);
        }
    }
    for _ in 0..6 {
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (x1, y1) = ((x0 + rng.gen_range(2..w)).min(w), (y0 + rng.gen_range(2..h)).min(h));
        let c = [rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()];
        for y in y0..y1 {
            for x in x0..x1 {
                img.set(x, y, c);
            }
        }
    }
    img
}

fn criterion_5() -> Outcome {
    let close = |a: f32, b: f32, tol: f32| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()));
    let mut worst = 0.0f32;
    for seed in 0..20u64 {
        let planes = compute_channels(&textured(seed, 40 + seed as usize, 30));
        let mag = &planes[3];
        for i in 0..mag.data.len() {
            let s: f32 = (4..4 + N_ORIENTS).map(|c| planes[c].data[i]).sum();
            worst = worst.max((s - mag.data[i]).abs() / (1.0 + mag.data[i]));
        }
    }
    ensure(worst <= CONSERVATION_TOL, || format!("orientation planes miss magnitude by {worst:e}"))?;

    let s = ChannelStack::from_image(&textured(1, 32, 32));
    let len = s.extract_window(CellWindow { x: 0, y: 0, w: 8, h: 8 }).map_err(|e| e.to_string())?.len();
    ensure(len == (32 / CELL) * (32 / CELL) * N_CHANNELS && len == 640, || format!("descriptor length {len}"))?;

    // with zero exponents an approximated level is its real level resampled
    let cfg = PyramidConfig { lambdas: [0.0; N_CHANNELS], min_window: (16, 16), pad: (0, 0), ..PyramidConfig::default() };
    let step = cfg.n_approx_per_real + 1;
    let mut checked = 0;
    for seed in 0..3u64 {
        let pyr = build_pyramid(&textured(seed, 160, 96), &cfg).map_err(|e| e.to_string())?;
        for i in (0..pyr.levels.len()).filter(|i| i % step != 0) {
            let lvl = &pyr.levels[i];
            let n = lvl.width * lvl.height;
            let candidates: Vec<usize> = [i / step * step, (i / step + 1) * step].into_iter().filter(|&r| r < pyr.levels.len()).collect();
            let fits = candidates.iter().any(|&r| {
                let real = &pyr.levels[r];
                (0..N_CHANNELS).all(|c| {
                    let p = Plane { width: real.width, height: real.height, data: real.plane(c).to_vec() };
                    let want = p.resample(lvl.width, lvl.height);
                    want.data.iter().zip(&lvl.data[c * n..(c + 1) * n]).all(|(a, b)| close(*a, *b, 1e-6))
                })
            });
            ensure(fits, || format!("level {i} is not a resampled real level"))?;
            checked += 1;
        }
    }

    let mut flips = 0;
    for seed in 0..10u64 {
        let img = textured(seed, 24 + 2 * seed as usize, 20);
        let a = compute_channels(&img);
        let b = compute_channels(&img.flip_horizontal());
        for c in 0..N_CHANNELS {
            let mirror = if c < 4 { c } else { 4 + (N_ORIENTS - 1 - (c - 4)) };
            let fa = a[c].flip_horizontal();
            let tol = if c < 4 { 1e-4 } else { 1e-3 };
            let ok = fa.data.iter().zip(&b[mirror].data).all(|(x, y)| close(*x, *y, tol));
            ensure(ok, || format!("image {seed}: channel {c} does not mirror onto {mirror}"))?;
        }
        flips += 1;
    }
    Ok(format!("conservation error {worst:.1e}; 32x32 gives {len}; {checked} approximated levels match; {flips} flips equivariant"))
}

// ---------------------------------------------------------------- 6 to 9

struct Synthetic {
    root: PathBuf,
    main: RunConfig,
}

fn config(root: &Path, out: &str, sets: &[&str]) -> RunConfig {
    let mut all = vec![
        format!("train_dir={}", root.join("data/train").display()),
        format!("test_dir={}", root.join("data/test").display()),
        format!("out_dir={}", root.join(out).display()),
        format!("train.tree_schedule={SCHEDULE}"),
        format!("train.mining_rounds={MINING_ROUNDS}"),
        "orientation.bins=8".to_string(),
    ];
    all.extend(sets.iter().map(|s| s.to_string()));
    RunConfig::default().with_overrides(&all).unwrap()
}

/// Non-plot outputs below `dir`, keyed by relative path.
fn outputs(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| matches!(x.to_str(), Some("json" | "jsonl" | "csv" | "txt"))) {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn diff(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) -> Option<String> {
    if a.keys().ne(b.keys()) {
        return Some("different file sets".into());
    }
    a.iter().find(|(k, v)| b[*k] != **v).map(|(k, _)| format!("{} differs", k.display()))
}

fn moderate(s: &EvalSummary) -> &DifficultyResult {
    s.results.iter().find(|r| r.settings.name == "moderate").expect("moderate result")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            copy_dir(&p, &to.join(e.file_name()));
        } else {
            std::fs::copy(&p, to.join(e.file_name())).unwrap();
        }
    }
}

fn criterion_6(ctx: &Synthetic) -> Outcome {
    let run = |cfg: &RunConfig| -> subcat::error::Result<EvalSummary> {
        run_cluster(cfg)?;
        run_train(cfg)?;
        run_detect(cfg)?;
        run_orient(cfg)?;
        run_eval(cfg)
    };
    let main = run(&ctx.main).map_err(|e| e.to_string())?;
    let baseline = run(&config(&ctx.root, "b1", &["cluster.b=1"])).map_err(|e| e.to_string())?;
    let (m, b) = (moderate(&main), moderate(&baseline));
    let ratio = if m.ap > 0.0 { m.aos / m.ap } else { 0.0 };
    let line = format!(
        "moderate AP {:.4}, AOS {:.4} (ratio {:.3}); B=1 baseline AP {:.4}; {}",
        m.ap,
        m.aos,
        ratio,
        b.ap,
        summary_line(&main)
    );
    ensure(m.ap >= MIN_AP, || format!("AP below {MIN_AP}: {line}"))?;
    ensure(ratio >= MIN_AOS_RATIO, || format!("AOS/AP below {MIN_AOS_RATIO}: {line}"))?;
    ensure(b.ap < m.ap, || format!("baseline not lower: {line}"))?;
    Ok(line)
}

/// Objects at least partly occluded; everything else is don't-care.
fn occluded_only() -> EvalSettings {
    EvalSettings {
        name: "occluded".into(),
        min_height: 25.0,
        max_occlusion: Occlusion::Heavy,
        max_truncation: 0.5,
        overlap_thr: 0.7,
        min_occlusion: Some(Occlusion::Partial),
    }
}

fn criterion_7(ctx: &Synthetic) -> Outcome {
    let split = config(&ctx.root, "split", &["cluster.split=true"]);
    let go = || -> subcat::error::Result<()> {
        run_cluster(&split)?;
        run_train(&split)?;
        run_detect(&split)?;
        run_orient(&split)?;
        Ok(())
    };
    go().map_err(|e| e.to_string())?;
    let gt = ctx.main.test_dir.join("label_2");
    let score = |cfg: &RunConfig| -> std::result::Result<(f64, usize), String> {
        let s = evaluate_dirs(&gt, &cfg.results_dir().join("data"), "Car", &[occluded_only()], Interpolation::Points41).map_err(|e| e.to_string())?;
        Ok((s.results[0].ap, s.results[0].n_gt))
    };
    let (m1, n_gt) = score(&ctx.main)?;
    let (sp, _) = score(&split)?;
    let k = ModelBundle::load(&split.models_dir()).map_err(|e| e.to_string())?.models.len();
    let line = format!("occluded-only AP over {n_gt} objects: M=1 {m1:.4}, split {sp:.4} ({k} models)");
    ensure(n_gt > 0 && m1 >= sp, || line.clone())?;
    Ok(line)
}

fn criterion_8(ctx: &Synthetic) -> Outcome {
    let wide = SynthSpec { n_images: 6, seed: 8, image_w: 1242, image_h: 375, ..SynthSpec::default() };
    let wide_dir = ctx.root.join("data/wide");
    write_split(&wide, &wide_dir).map_err(|e| e.to_string())?;
    let bundle = |out: &str, sets: &[&str]| -> std::result::Result<(ModelBundle, RunConfig), String> {
        let cfg = config(&ctx.root, out, sets);
        run_cluster(&cfg).map_err(|e| e.to_string())?;
        Ok((run_train(&cfg).map_err(|e| e.to_string())?, cfg))
    };
    let (one, one_cfg) = bundle("k1", &["resolutions=1", "cluster.b=1"])?;
    let (many, many_cfg) = bundle("k20", &["resolutions=1", "cluster.strategy=\"KMeans\"", "cluster.k=20"])?;
    ensure(one.models.len() == 1 && many.models.len() == 20, || format!("trained {} and {} models", one.models.len(), many.models.len()))?;
    let time = |b: &ModelBundle, cfg: &RunConfig| -> std::result::Result<(f64, usize), String> {
        let spec = ensemble_spec(b, cfg).map_err(|e| e.to_string())?;
        let mut best = f64::INFINITY;
        let mut n = 0;
        for _ in 0..2 {
            let t = Instant::now();
            let out = detect_dir(&wide_dir, &spec).map_err(|e| e.to_string())?;
            best = best.min(t.elapsed().as_secs_f64());
            n = out.iter().map(|(_, o)| o.detections.len()).sum();
        }
        Ok((best, n))
    };
    let (t1, _) = time(&one, &one_cfg)?;
    let (t20, _) = time(&many, &many_cfg)?;
    let ratio = t20 / t1;
    let fps = |t: f64| wide.n_images as f64 / t;
    let line = format!("K=1 {:.2} fps, K=20 {:.2} fps on 1242x375, slowdown {ratio:.2}x", fps(t1), fps(t20));
    ensure(ratio <= MAX_K20_SLOWDOWN, || line.clone())?;
    Ok(line)
}

fn criterion_9(ctx: &Synthetic) -> Outcome {
    // stages after training, on the end-to-end models, at 1 and 8 workers
    let reference = outputs(&ctx.main.out_dir);
    let mut checked = 0;
    for n in [1usize, 8] {
        let cfg = config(&ctx.root, &format!("det{n}"), &[]);
        let _ = std::fs::remove_dir_all(&cfg.out_dir);
        copy_dir(&ctx.main.models_dir(), &cfg.models_dir());
        workers(n, || -> subcat::error::Result<()> {
            run_cluster(&cfg)?;
            run_detect(&cfg)?;
            run_orient(&cfg)?;
            run_eval(&cfg)?;
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        let mut got = outputs(&cfg.out_dir);
        let mut want = reference.clone();
        want.retain(|k, _| !k.starts_with("train_log.jsonl"));
        got.retain(|k, _| want.contains_key(k));
        if let Some(d) = diff(&want, &got) {
            return Err(format!("{n} workers: {d}"));
        }
        checked = got.len();
    }

    // every stage, including generation and training, on a small config
    let small = ctx.root.join("small");
    let small_cfg = |out: &str| {
        let mut c = config(&small, out, &["resolutions=1", "cluster.b=2", "train.tree_schedule=[8,16]", "train.n_random_neg=300", "train.mining_rounds=1"]);
        c.synth_train.n_images = 24;
        c.synth_test.n_images = 8;
        c
    };
    let mut runs = Vec::new();
    for (n, out) in [(1usize, "w1a"), (1, "w1b"), (8, "w8")] {
        let cfg = small_cfg(out);
        let _ = std::fs::remove_dir_all(&cfg.out_dir);
        let data = small.join("data");
        let cfg = RunConfig { train_dir: data.join("train"), test_dir: data.join("test"), ..cfg };
        workers(n, || -> subcat::error::Result<()> {
            run_synth(&cfg)?;
            run_all(&cfg)?;
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        let mut all = outputs(&data).into_iter().map(|(k, v)| (Path::new("data").join(k), v)).collect::<BTreeMap<_, _>>();
        all.extend(outputs(&cfg.out_dir));
        runs.push(all);
    }
    for r in &runs[1..] {
        if let Some(d) = diff(&runs[0], r) {
            return Err(format!("small pipeline: {d}"));
        }
    }
    Ok(format!("{checked} files identical after detect/orient/eval at 1 and 8 workers; {} files identical over three full small runs", runs[0].len()))
}

// ---------------------------------------------------------------- 10

fn criterion_10(root: &Path) -> Option<Outcome> {
    let train = PathBuf::from(std::env::var_os("SUBCAT_KITTI_DIR")?);
    let test = std::env::var_os("SUBCAT_KITTI_TEST_DIR").map_or_else(|| train.clone(), PathBuf::from);
    let go = || -> std::result::Result<String, String> {
        let n = std::fs::read_dir(train.join("image_2")).map_err(|e| e.to_string())?.count();
        ensure(n >= 500, || format!("{} holds {n} images, need at least 500", train.display()))?;
        let cfg = RunConfig::default()
            .with_overrides(&[
                format!("train_dir={}", train.display()),
                format!("test_dir={}", test.display()),
                format!("out_dir={}", root.join("kitti").display()),
                "resolutions=1".into(),
                "cluster.b=8".into(),
            ])
            .map_err(|e| e.to_string())?;
        let s = run_all(&cfg).map_err(|e| e.to_string())?;
        let k = ModelBundle::load(&cfg.models_dir()).map_err(|e| e.to_string())?.models.len();
        let m = moderate(&s);
        ensure(k == 8 && m.ap > 0.0, || format!("{k} models, moderate AP {}", m.ap))?;
        Ok(format!("{k} models on {n} images; {}", summary_line(&s)))
    };
    Some(go())
}

// ----------------------------------------------------------------

fn report(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Option<Outcome>) -> bool {
    let t = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Some(Err(format!("panicked: {}", msg.unwrap_or_default())))
    });
    let took = t.elapsed();
    let (tag, detail, ok) = match outcome {
        None => ("SKIP", "data not supplied".to_string(), true),
        Some(Ok(d)) if took <= budget => ("PASS", d, true),
        Some(Ok(d)) => ("FAIL", format!("{d}; over the {:.0} s budget", budget.as_secs_f64()), false),
        Some(Err(d)) => ("FAIL", d, false),
    };
    println!("criterion {id:>2} {tag} {name} ({:.1} s): {detail}", took.as_secs_f64());
    ok
}

fn main() {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&root).unwrap();
    let mut ok = true;
    ok &= report(1, "metric oracle equivalence", minutes(1.0), || Some(criterion_1()));
    ok &= report(2, "NMS semantics", minutes(1.0), || Some(criterion_2()));
    ok &= report(3, "clustering invariants", minutes(2.0), || Some(criterion_3()));
    ok &= report(4, "boosting invariants", minutes(2.0), || Some(criterion_4()));
    ok &= report(5, "channel feature properties", minutes(1.0), || Some(criterion_5()));

    let ctx = Synthetic { main: config(&root, "main", &[]), root: root.clone() };
    let data = run_synth(&ctx.main);
    if let Err(e) = &data {
        println!("synthetic data generation failed: {e}");
    }
    let have_data = data.is_ok();
    let c = &ctx;
    let heavy = |f: fn(&Synthetic) -> Outcome| move || Some(if have_data { f(c) } else { Err("no synthetic data".into()) });
    ok &= report(6, "synthetic end-to-end", desktop_budget(30.0), heavy(criterion_6));
    ok &= report(7, "M=1 vs split on occluded objects", desktop_budget(30.0), heavy(criterion_7));
    ok &= report(8, "K=20 vs K=1 detection time", minutes(5.0), heavy(criterion_8));
    ok &= report(9, "determinism across runs and workers", desktop_budget(10.0), heavy(criterion_9));
    ok &= report(10, "user KITTI smoke test", Duration::MAX, || criterion_10(&root));

    println!("acceptance: {}", if ok { "all criteria met" } else { "some criteria FAILED" });
    if !ok {
        std::process::exit(1);
    }
}
