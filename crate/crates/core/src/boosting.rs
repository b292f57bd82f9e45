//! Real AdaBoost over depth-2 trees, the boosted window classifier with its
//! soft cascade, and the staged training loop with hard-negative mining.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::{iou, BBox2D, OverlapMode};
use crate::channels::{CellWindow, ChannelPyramid, PyramidConfig, CELL, N_CHANNELS};
use crate::clustering::ModelDims;
use crate::dataset::TrainingSet;
use crate::detector::{clipped_window_box, hit_box, nms_greedy, slide_hits, Detection, WindowHit};
use crate::error::{Error, Result};

pub const N_BINS: usize = 256;
const N_THRESH: usize = N_BINS - 1;
const LEAF_FLOOR: f64 = 1e-9;
pub const MODEL_VERSION: u32 = 1;

/// Feature-major 8-bit quantization of a training set. Feature `f` has
/// thresholds `t_b = min + (b + 1) * (max - min) / 256` and a sample's bin
/// is the number of thresholds not exceeding its value, so `x < t_b`
/// exactly when `bin <= b`.
#[derive(Debug, Clone)]
pub struct QuantizedFeatures {
    pub n_samples: usize,
    pub n_features: usize,
    bins: Vec<u8>,
    thresholds: Vec<f32>,
}

impl QuantizedFeatures {
    /// `rows[i]` is sample `i`.
    pub fn new(rows: &[&[f32]]) -> Result<Self> {
        let n = rows.len();
        let nf = rows.first().map(|r| r.len()).ok_or_else(|| Error::invalid("no samples"))?;
        for r in rows {
            if r.len() != nf {
                return Err(Error::DimensionMismatch {
                    expected: nf,
                    got: r.len(),
                });
            }
        }
        let per_feature: Vec<(Vec<f32>, Vec<u8>)> = (0..nf)
            .into_par_iter()
            .map(|f| {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                for r in rows {
                    lo = lo.min(r[f]);
                    hi = hi.max(r[f]);
                }
                let step = (hi as f64 - lo as f64) / N_BINS as f64;
                let thr: Vec<f32> = (0..N_THRESH)
                    .map(|b| (lo as f64 + (b + 1) as f64 * step) as f32)
                    .collect();
                let bins = rows
                    .iter()
                    .map(|r| thr.partition_point(|t| *t <= r[f]) as u8)
                    .collect();
                (thr, bins)
            })
            .collect();
        let mut bins = Vec::with_capacity(n * nf);
        let mut thresholds = Vec::with_capacity(N_THRESH * nf);
        for (t, b) in per_feature {
            thresholds.extend(t);
            bins.extend(b);
        }
        Ok(QuantizedFeatures {
            n_samples: n,
            n_features: nf,
            bins,
            thresholds,
        })
    }

    #[inline]
    pub fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n_samples..(f + 1) * self.n_samples]
    }

    #[inline]
    pub fn threshold(&self, f: usize, b: usize) -> f32 {
        self.thresholds[f * N_THRESH + b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: u32,
    /// Samples with `x < threshold` go left.
    pub threshold: f32,
}

impl Split {
    /// Routes everything left.
    pub const PASS: Split = Split {
        feature: 0,
        threshold: f32::MAX,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTwoTree {
    pub root: Split,
    pub children: [Split; 2],
    /// Left-left, left-right, right-left, right-right.
    pub leaf_values: [f64; 4],
}

impl DepthTwoTree {
    #[inline]
    pub fn leaf_with(&self, get: impl Fn(usize) -> f32) -> usize {
        let r = usize::from(get(self.root.feature as usize) >= self.root.threshold);
        let c = &self.children[r];
        2 * r + usize::from(get(c.feature as usize) >= c.threshold)
    }

    #[inline]
    pub fn eval(&self, x: &[f32]) -> f64 {
        self.leaf_values[self.leaf_with(|f| x[f])]
    }

    fn max_feature(&self) -> u32 {
        self.root
            .feature
            .max(self.children[0].feature)
            .max(self.children[1].feature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeStats {
    /// Weighted error of `sign(h)` on the fitting distribution.
    pub error: f64,
}

fn leaf_value(wp: f64, wn: f64) -> f64 {
    0.5 * ((wp + LEAF_FLOOR) / (wn + LEAF_FLOOR)).ln()
}

const TIE: f64 = 1e-12;

/// Whether `(err, balance)` beats the incumbent: lower error, or an equal
/// error with more weight on the lighter side. The balance rule lets the
/// root of a tree split symmetric data such as XOR down the middle.
fn better(err: f64, balance: f64, best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((e, b)) => err < e - TIE || (err <= e + TIE && balance > b),
    }
}

/// Best `(error, feature, bin)` split for each node in `0..n_nodes`, or
/// `None` when a node admits no split with samples on both sides.
fn best_splits(
    data: &QuantizedFeatures,
    y: &[bool],
    w: &[f64],
    node: &[u8],
    n_nodes: usize,
) -> Vec<Option<(f64, usize, usize)>> {
    let per_feature: Vec<Vec<Option<(f64, f64, usize)>>> = (0..data.n_features)
        .into_par_iter()
        .map(|f| {
            let col = data.column(f);
            let mut hp = vec![[0.0f64; N_BINS]; n_nodes];
            let mut hn = vec![[0.0f64; N_BINS]; n_nodes];
            let mut cnt = vec![[0u32; N_BINS]; n_nodes];
            for i in 0..col.len() {
                let k = node[i] as usize;
                if k >= n_nodes {
                    continue;
                }
                let b = col[i] as usize;
                if y[i] {
                    hp[k][b] += w[i];
                } else {
                    hn[k][b] += w[i];
                }
                cnt[k][b] += 1;
            }
            (0..n_nodes)
                .map(|k| {
                    let tp: f64 = hp[k].iter().sum();
                    let tn: f64 = hn[k].iter().sum();
                    let tc: u32 = cnt[k].iter().sum();
                    let (mut lp, mut ln, mut lc) = (0.0, 0.0, 0u32);
                    let mut best: Option<(f64, f64, usize)> = None;
                    for b in 0..N_THRESH {
                        lp += hp[k][b];
                        ln += hn[k][b];
                        lc += cnt[k][b];
                        if lc == 0 || lc == tc {
                            continue;
                        }
                        let err = lp.min(ln) + (tp - lp).min(tn - ln);
                        let balance = (lp + ln).min(tp + tn - lp - ln);
                        if better(err, balance, best.map(|(e, bal, _)| (e, bal))) {
                            best = Some((err, balance, b));
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    (0..n_nodes)
        .map(|k| {
            let mut best: Option<(f64, f64, usize, usize)> = None;
            for (f, cand) in per_feature.iter().enumerate() {
                if let Some((e, bal, b)) = cand[k] {
                    if better(e, bal, best.map(|(be, bb, _, _)| (be, bb))) {
                        best = Some((e, bal, f, b));
                    }
                }
            }
            best.map(|(e, _, f, b)| (e, f, b))
        })
        .collect()
}

/// Greedy depth-2 tree minimizing weighted classification error at each
/// node, with real-valued leaves `0.5 ln(W+ / W-)`.
pub fn train_tree(data: &QuantizedFeatures, y: &[bool], w: &[f64]) -> Result<(DepthTwoTree, TreeStats)> {
    let n = data.n_samples;
    if y.len() != n || w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len().min(w.len()),
        });
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::invalid("tree training needs both classes"));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Range("sample weights must be finite and non-negative".into()));
    }
    let mut node = vec![0u8; n];
    let root = match best_splits(data, y, w, &node, 1)[0] {
        Some((_, f, b)) => Split {
            feature: f as u32,
            threshold: data.threshold(f, b),
        },
        None => Split::PASS,
    };
    let route = |split: &Split, i: usize| -> bool {
        // true means right
        if split.threshold == f32::MAX {
            return false;
        }
        let f = split.feature as usize;
        // threshold index b satisfies threshold(f, b) == split.threshold
        data.column(f)[i] as usize > bin_of(data, f, split.threshold)
    };
    for (i, k) in node.iter_mut().enumerate() {
        *k = u8::from(route(&root, i));
    }
    // pure children pass through without searching
    let mut pure = [true; 2];
    for k in 0..2 {
        let mut has = [false; 2];
        for i in 0..n {
            if node[i] as usize == k && w[i] > 0.0 {
                has[usize::from(y[i])] = true;
            }
        }
        pure[k] = !(has[0] && has[1]);
    }
    let mask: Vec<u8> = node
        .iter()
        .map(|&k| if pure[k as usize] { 2 } else { k })
        .collect();
    let found = best_splits(data, y, w, &mask, 2);
    let mut children = [Split::PASS; 2];
    for k in 0..2 {
        if !pure[k] {
            if let Some((_, f, b)) = found[k] {
                children[k] = Split {
                    feature: f as u32,
                    threshold: data.threshold(f, b),
                };
            }
        }
    }
    let mut wp = [0.0; 4];
    let mut wn = [0.0; 4];
    for i in 0..n {
        let r = node[i] as usize;
        let leaf = 2 * r + usize::from(route(&children[r], i));
        if y[i] {
            wp[leaf] += w[i];
        } else {
            wn[leaf] += w[i];
        }
    }
    let total: f64 = wp.iter().sum::<f64>() + wn.iter().sum::<f64>();
    let mut leaf_values = [0.0; 4];
    let mut err = 0.0;
    for l in 0..4 {
        leaf_values[l] = leaf_value(wp[l], wn[l]);
        err += if leaf_values[l] > 0.0 {
            wn[l]
        } else if leaf_values[l] < 0.0 {
            wp[l]
        } else {
            0.5 * (wp[l] + wn[l])
        };
    }
    Ok((
        DepthTwoTree {
            root,
            children,
            leaf_values,
        },
        TreeStats {
            error: if total > 0.0 { err / total } else { 0.5 },
        },
    ))
}

/// Threshold index whose value equals `t`; the first one when several
/// thresholds coincide, which routes identically.
fn bin_of(data: &QuantizedFeatures, f: usize, t: f32) -> usize {
    let thr = &data.thresholds[f * N_THRESH..(f + 1) * N_THRESH];
    thr.partition_point(|v| *v < t)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BoostTrace {
    /// `sum_i w0_i exp(-y_i F(x_i))` after each accepted tree.
    pub losses: Vec<f64>,
    pub errors: Vec<f64>,
    /// Set when training stopped because no tree beat chance.
    pub halted: bool,
}

/// Real AdaBoost. Positives and negatives each start with half the mass.
pub fn adaboost(
    pos: &[&[f32]],
    neg: &[&[f32]],
    n_trees: usize,
) -> Result<(Vec<DepthTwoTree>, BoostTrace)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("boosting needs positive and negative samples"));
    }
    let rows: Vec<&[f32]> = pos.iter().chain(neg.iter()).copied().collect();
    let data = QuantizedFeatures::new(&rows)?;
    let n = rows.len();
    let y: Vec<bool> = (0..n).map(|i| i < pos.len()).collect();
    let w0: Vec<f64> = y
        .iter()
        .map(|&p| 0.5 / if p { pos.len() } else { neg.len() } as f64)
        .collect();
    let mut scores = vec![0.0f64; n];
    let mut w = w0.clone();
    let mut trees = Vec::with_capacity(n_trees);
    let mut trace = BoostTrace::default();
    for _t in 0..n_trees {
        let (tree, stats) = train_tree(&data, &y, &w)?;
        if !(stats.error < 0.5) {
            trace.halted = true;
            break;
        }
        for (i, r) in rows.iter().enumerate() {
            scores[i] += tree.eval(r);
        }
        let unnorm: Vec<f64> = (0..n)
            .map(|i| w0[i] * (-(if y[i] { 1.0 } else { -1.0 }) * scores[i]).exp())
            .collect();
        let loss: f64 = unnorm.iter().sum();
        trace.losses.push(loss);
        trace.errors.push(stats.error);
        trees.push(tree);
        if loss <= 0.0 || !loss.is_finite() {
            trace.halted = true;
            break;
        }
        for (wi, u) in w.iter_mut().zip(&unnorm) {
            *wi = u / loss;
        }
    }
    if trees.is_empty() {
        return Err(Error::invalid("no weak learner beat chance"));
    }
    Ok((trees, trace))
}

/// Trained window classifier for one subcategory at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub version: u32,
    pub trees: Vec<DepthTwoTree>,
    pub model_w: usize,
    pub model_h: usize,
    pub pad_w: usize,
    pub pad_h: usize,
    /// Median object h/w, see [`ModelDims::aspect`].
    #[serde(default)]
    pub aspect: f64,
    /// Reject a window once its running score after tree `t` drops below
    /// `cascade_thresholds[t]`.
    pub cascade_thresholds: Vec<f64>,
    pub calib_min: f64,
    pub calib_max: f64,
    pub subcategory_id: usize,
    /// Index into [`crate::detector::RESOLUTION_FACTORS`].
    pub resolution_level: usize,
}

impl BoostedModel {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            model_w: self.model_w,
            model_h: self.model_h,
            pad_w: self.pad_w,
            pad_h: self.pad_h,
            aspect: self.aspect,
        }
    }

    pub fn n_features(&self) -> usize {
        (self.model_w / CELL) * (self.model_h / CELL) * N_CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::invalid("model has no trees"));
        }
        if self.model_w % CELL != 0 || self.model_h % CELL != 0 || self.model_w == 0 || self.model_h == 0 {
            return Err(Error::invalid("model size must be a positive multiple of the cell size"));
        }
        if self.cascade_thresholds.len() != self.trees.len() {
            return Err(Error::DimensionMismatch {
                expected: self.trees.len(),
                got: self.cascade_thresholds.len(),
            });
        }
        let nf = self.n_features() as u32;
        for t in &self.trees {
            if t.max_feature() >= nf {
                return Err(Error::invalid("tree references a feature outside the window"));
            }
            if !t.root.threshold.is_finite() || t.children.iter().any(|c| !c.threshold.is_finite()) {
                return Err(Error::invalid("non-finite tree threshold"));
            }
        }
        if !(self.calib_min < self.calib_max) {
            return Err(Error::invalid("calibration bounds must satisfy min < max"));
        }
        Ok(())
    }

    /// Full score, ignoring the cascade.
    pub fn score(&self, x: &[f32]) -> f64 {
        self.trees.iter().map(|t| t.eval(x)).sum()
    }

    /// Score with early rejection; `None` when the cascade rejects.
    #[inline]
    pub fn score_cascade_with(&self, get: impl Fn(usize) -> f32) -> Option<f64> {
        let mut s = 0.0;
        for (t, thr) in self.trees.iter().zip(&self.cascade_thresholds) {
            s += t.leaf_values[t.leaf_with(&get)];
            if s < *thr {
                return None;
            }
        }
        Some(s)
    }

    pub fn score_cascade(&self, x: &[f32]) -> Option<f64> {
        self.score_cascade_with(|f| x[f])
    }

    /// Lowest score a window can have and still be reported.
    pub fn floor(&self) -> f64 {
        *self.cascade_thresholds.last().expect("validated model has trees")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: BoostedModel = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", m.version)));
        }
        m.validate()?;
        Ok(m)
    }
}

/// Running-score floors: after each tree, the lowest partial score over
/// `pos` minus `offset`, but never above `cap`.
pub fn cascade_thresholds(trees: &[DepthTwoTree], pos: &[&[f32]], offset: f64, cap: f64) -> Vec<f64> {
    let mut floors = vec![f64::INFINITY; trees.len()];
    for x in pos {
        let mut s = 0.0;
        for (t, tree) in trees.iter().enumerate() {
            s += tree.eval(x);
            floors[t] = floors[t].min(s);
        }
    }
    floors.iter().map(|f| (f - offset).min(cap)).collect()
}

/// Training schedule and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Trees per stage; the last entry repeats if there are more stages.
    pub tree_schedule: Vec<usize>,
    pub n_random_neg: usize,
    pub mining_rounds: usize,
    /// Mined windows overlapping any class instance at least this much are
    /// not negatives.
    pub exclusion_overlap: f64,
    /// Random negatives overlap every class instance less than this.
    pub random_neg_overlap: f64,
    /// Mined windows kept per round; 0 means `n_random_neg`.
    pub mining_quota: usize,
    pub mining_per_image: usize,
    pub max_negatives: usize,
    pub cascade_offset: f64,
    /// Upper bound on every cascade threshold. Training positives are fit
    /// with large margins, so their partial-score minimum alone would
    /// reject many unseen objects.
    pub cascade_cap: f64,
    /// Add the neighbors one cell away from each positive window.
    pub jitter: bool,
    /// Positive windows must overlap their object at least this much.
    pub positive_overlap: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tree_schedule: vec![32, 128, 512, 2048],
            n_random_neg: 5000,
            mining_rounds: 3,
            exclusion_overlap: 0.3,
            random_neg_overlap: 0.1,
            mining_quota: 0,
            mining_per_image: 25,
            max_negatives: 10000,
            cascade_offset: 1.0,
            cascade_cap: -40.0,
            jitter: false,
            positive_overlap: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tree_schedule.is_empty() || self.tree_schedule.contains(&0) {
            return Err(Error::Config("tree schedule needs positive stage sizes".into()));
        }
        if !(self.exclusion_overlap > 0.0 && self.exclusion_overlap < 1.0) {
            return Err(Error::Config("exclusion_overlap must lie in (0, 1)".into()));
        }
        if self.n_random_neg == 0 {
            return Err(Error::Config("n_random_neg must be positive".into()));
        }
        Ok(())
    }

    pub fn trees_for_stage(&self, stage: usize) -> usize {
        self.tree_schedule[stage.min(self.tree_schedule.len() - 1)]
    }
}

/// One ground-truth instance used as a positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveSample {
    pub image: usize,
    pub bbox: BBox2D,
}

/// Pyramid window `(level, x, y)` whose object box best overlaps `bbox`,
/// with that overlap. Ties keep the finer level, then the top-left window.
pub fn best_window(pyramid: &ChannelPyramid, bbox: &BBox2D, dims: &ModelDims) -> Option<(f64, usize, usize, usize)> {
    let (cw, ch) = dims.cells();
    let (ox0, oy0, ox1, oy1) = dims.object_box();
    let mut best: Option<(f64, usize, usize, usize)> = None;
    let c = CELL as f64;
    for (l, st) in pyramid.levels.iter().enumerate() {
        if st.width < cw || st.height < ch {
            continue;
        }
        // the aligned window sits near the mapped box corners; either corner
        // may be cut off by the image border
        let (px, py) = (st.pad_x as f64, st.pad_y as f64);
        let fx0 = (bbox.x1 * st.scale_x - ox0) / c + px;
        let fx1 = (bbox.x2 * st.scale_x - ox1) / c + px;
        let fy0 = (bbox.y1 * st.scale_y - oy0) / c + py;
        let fy1 = (bbox.y2 * st.scale_y - oy1) / c + py;
        let span = |a: f64, b: f64, hi: usize| {
            let lo = (a.min(b).floor() as i64 - 1).max(0) as usize;
            let up = ((a.max(b).ceil() as i64 + 1).max(0) as usize).min(hi);
            lo..=up
        };
        let xs = span(fx0, fx1, st.width - cw);
        let ys = span(fy0, fy1, st.height - ch);
        for y in ys {
            for x in xs.clone() {
                let o = iou(&clipped_window_box(dims, pyramid, l, x, y), bbox);
                if best.map_or(true, |b| o > b.0) {
                    best = Some((o, l, x, y));
                }
            }
        }
    }
    best
}

/// Features of the best-aligned pyramid window of each positive, plus its
/// one-cell neighbors when `jitter` is set. Positives whose best window
/// overlaps less than `min_overlap` are skipped.
pub fn positive_windows(
    set: &TrainingSet,
    samples: &[PositiveSample],
    dims: &ModelDims,
    min_overlap: f64,
    jitter: bool,
) -> Vec<Vec<f32>> {
    let (cw, ch) = dims.cells();
    let per: Vec<Vec<Vec<f32>>> = samples
        .par_iter()
        .map(|s| {
            let pyr = &set.pyramids[s.image];
            let Some((o, l, x, y)) = best_window(pyr, &s.bbox, dims) else {
                return Vec::new();
            };
            if o < min_overlap {
                return Vec::new();
            }
            let st = &pyr.levels[l];
            let r: i64 = if jitter { 1 } else { 0 };
            let mut out = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx < 0 || yy < 0 || xx as usize + cw > st.width || yy as usize + ch > st.height {
                        continue;
                    }
                    let win = CellWindow {
                        x: xx as usize,
                        y: yy as usize,
                        w: cw,
                        h: ch,
                    };
                    out.push(st.extract_window(win).expect("window inside level"));
                }
            }
            out
        })
        .collect();
    per.into_iter().flatten().collect()
}

/// A negative window located in a cached pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeWindow {
    pub image: usize,
    pub level: usize,
    pub x: usize,
    pub y: usize,
    pub score: f64,
    pub features: Vec<f32>,
}

fn max_overlap(b: &BBox2D, others: &[BBox2D]) -> f64 {
    others.iter().map(|o| iou(b, o)).fold(0.0, f64::max)
}

/// Random windows from the training pyramids that stay clear of every
/// class instance.
pub fn random_negatives(set: &TrainingSet, dims: &ModelDims, cfg: &TrainConfig, seed: u64) -> Vec<NegativeWindow> {
    let (cw, ch) = dims.cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes: Vec<Vec<BBox2D>> = (0..set.len()).map(|i| set.class_boxes(i)).collect();
    let mut out = Vec::with_capacity(cfg.n_random_neg);
    let mut attempts = 0usize;
    let max_attempts = cfg.n_random_neg.saturating_mul(50).max(1000);
    while out.len() < cfg.n_random_neg && attempts < max_attempts {
        attempts += 1;
        let i = rng.gen_range(0..set.len());
        let pyr = &set.pyramids[i];
        let fits: Vec<usize> = (0..pyr.levels.len())
            .filter(|&l| pyr.levels[l].width >= cw && pyr.levels[l].height >= ch)
            .collect();
        if fits.is_empty() {
            continue;
        }
        let l = fits[rng.gen_range(0..fits.len())];
        let st = &pyr.levels[l];
        let x = rng.gen_range(0..=st.width - cw);
        let y = rng.gen_range(0..=st.height - ch);
        let b = clipped_window_box(dims, pyr, l, x, y);
        if max_overlap(&b, &boxes[i]) >= cfg.random_neg_overlap {
            continue;
        }
        let features = st
            .extract_window(CellWindow { x, y, w: cw, h: ch })
            .expect("window inside level");
        out.push(NegativeWindow {
            image: i,
            level: l,
            x,
            y,
            score: 0.0,
            features,
        });
    }
    if out.len() < cfg.n_random_neg {
        log::warn!("sampled {} of {} random negatives", out.len(), cfg.n_random_neg);
    }
    out
}

/// Highest-scoring false positives of `model` over the training set,
/// excluding windows that overlap any class instance by
/// `cfg.exclusion_overlap` or more. Sorted by score, descending.
pub fn mine_hard_negatives(model: &BoostedModel, set: &TrainingSet, cfg: &TrainConfig, quota: usize) -> Vec<NegativeWindow> {
    let dims = model.dims();
    let (cw, ch) = dims.cells();
    let per_image: Vec<Vec<(WindowHit, BBox2D)>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let pyr = &set.pyramids[i];
            let mut hits = slide_hits(model, pyr, 1);
            hits.sort_by(|a, b| b.score.total_cmp(&a.score));
            hits.truncate(cfg.mining_per_image.max(1) * 20);
            let boxes = set.class_boxes(i);
            let dets: Vec<Detection> = hits
                .iter()
                .map(|h| Detection {
                    bbox: hit_box(model, pyr, h),
                    score: h.score,
                    model_id: 0,
                    resolution_level: model.resolution_level,
                })
                .collect();
            // keep each hit's window by matching the survivors back in order
            let kept = nms_greedy(&dets, 0.5, OverlapMode::IoU);
            let mut out = Vec::new();
            for k in kept {
                if max_overlap(&k.bbox, &boxes) >= cfg.exclusion_overlap {
                    continue;
                }
                let j = dets.iter().position(|d| d == &k).expect("survivor comes from input");
                out.push((hits[j], k.bbox));
                if out.len() >= cfg.mining_per_image {
                    break;
                }
            }
            out
        })
        .collect();
    let mut all: Vec<(usize, WindowHit)> = per_image
        .into_iter()
        .enumerate()
        .flat_map(|(i, v)| v.into_iter().map(move |(h, _)| (i, h)))
        .collect();
    all.sort_by(|a, b| {
        b.1.score
            .total_cmp(&a.1.score)
            .then(a.0.cmp(&b.0))
            .then(a.1.level.cmp(&b.1.level))
            .then(a.1.y.cmp(&b.1.y))
            .then(a.1.x.cmp(&b.1.x))
    });
    all.truncate(quota);
    all.into_iter()
        .map(|(i, h)| NegativeWindow {
            image: i,
            level: h.level,
            x: h.x,
            y: h.y,
            score: h.score,
            features: set.pyramids[i].levels[h.level]
                .extract_window(CellWindow { x: h.x, y: h.y, w: cw, h: ch })
                .expect("hit inside level"),
        })
        .collect()
}

/// Per-stage record written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub subcategory_id: usize,
    pub resolution_level: usize,
    pub stage: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_mined: usize,
    pub n_trees: usize,
    pub halted: bool,
    pub losses: Vec<f64>,
    pub train_error: f64,
}

/// Stage 0 on random negatives, then `mining_rounds` rounds of mining and
/// retraining from scratch on the accumulated negatives.
pub fn train_subcategory(
    samples: &[PositiveSample],
    set: &TrainingSet,
    dims: ModelDims,
    subcategory_id: usize,
    resolution_level: usize,
    cfg: &TrainConfig,
) -> Result<(BoostedModel, Vec<StageLog>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid(format!("subcategory {subcategory_id} has no positives")));
    }
    let pos = positive_windows(set, samples, &dims, cfg.positive_overlap, cfg.jitter);
    if pos.is_empty() {
        return Err(Error::invalid(format!(
            "subcategory {subcategory_id}: no positive fits a {}x{} template",
            dims.model_w, dims.model_h
        )));
    }
    let seed = cfg
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((subcategory_id * 8 + resolution_level) as u64);
    let mut negs = random_negatives(set, &dims, cfg, seed);
    if negs.is_empty() {
        return Err(Error::invalid("no negative windows could be sampled"));
    }
    let pos_refs: Vec<&[f32]> = pos.iter().map(|v| v.as_slice()).collect();
    let quota = if cfg.mining_quota == 0 { cfg.n_random_neg } else { cfg.mining_quota };
    let mut logs = Vec::new();
    let mut model = None;
    for stage in 0..=cfg.mining_rounds {
        let mut n_mined = 0;
        if let Some(m) = &model {
            let mined = mine_hard_negatives(m, set, cfg, quota);
            n_mined = mined.len();
            negs.extend(mined);
            if negs.len() > cfg.max_negatives {
                let drop = negs.len() - cfg.max_negatives;
                negs.drain(..drop);
            }
        }
        let neg_refs: Vec<&[f32]> = negs.iter().map(|n| n.features.as_slice()).collect();
        let (trees, trace) = adaboost(&pos_refs, &neg_refs, cfg.trees_for_stage(stage))?;
        let err = {
            let wrong_pos = pos_refs.iter().filter(|x| trees.iter().map(|t| t.eval(x)).sum::<f64>() <= 0.0).count();
            let wrong_neg = neg_refs.iter().filter(|x| trees.iter().map(|t| t.eval(x)).sum::<f64>() > 0.0).count();
            (wrong_pos + wrong_neg) as f64 / (pos_refs.len() + neg_refs.len()) as f64
        };
        logs.push(StageLog {
            subcategory_id,
            resolution_level,
            stage,
            n_pos: pos_refs.len(),
            n_neg: neg_refs.len(),
            n_mined,
            n_trees: trees.len(),
            halted: trace.halted,
            losses: trace.losses.clone(),
            train_error: err,
        });
        let thresholds = cascade_thresholds(&trees, &pos_refs, cfg.cascade_offset, cfg.cascade_cap);
        let mut m = BoostedModel {
            version: MODEL_VERSION,
            trees,
            model_w: dims.model_w,
            model_h: dims.model_h,
            pad_w: dims.pad_w,
            pad_h: dims.pad_h,
            aspect: dims.aspect,
            cascade_thresholds: thresholds,
            calib_min: 0.0,
            calib_max: 1.0,
            subcategory_id,
            resolution_level,
        };
        let (lo, hi) = calibration_bounds(&m, &pos_refs, &neg_refs);
        m.calib_min = lo;
        m.calib_max = hi;
        model = Some(m);
    }
    Ok((model.expect("at least one stage"), logs))
}

/// Score range of `model` over the given training windows.
fn calibration_bounds(model: &BoostedModel, pos: &[&[f32]], neg: &[&[f32]]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in pos.iter().chain(neg) {
        let s = model.score(x);
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if !(hi > lo) {
        hi = lo + 1e-9;
    }
    (lo, hi)
}

/// One model file listed in a bundle manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub subcategory_id: usize,
    pub resolution_level: usize,
    pub model_w: usize,
    pub model_h: usize,
    pub pad_w: usize,
    pub pad_h: usize,
    pub calib_min: f64,
    pub calib_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub class_name: String,
    pub base_width: usize,
    /// Clustering settings that produced the subcategories.
    pub cluster_spec: serde_json::Value,
    pub n_subcategories: usize,
    pub resolution_levels: Vec<usize>,
    pub pyramid: PyramidConfig,
    pub models: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub manifest: Manifest,
    pub models: Vec<BoostedModel>,
}

impl ModelBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (entry, m) in self.manifest.models.iter().zip(&self.models) {
            let p = dir.join(&entry.file);
            std::fs::write(&p, m.to_json()?).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let models = manifest
            .models
            .iter()
            .map(|e| {
                let p = dir.join(&e.file);
                let t = std::fs::read_to_string(&p).map_err(|err| Error::io(&p, err))?;
                BoostedModel::from_json(&t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelBundle { manifest, models })
    }

    pub fn entry_for(m: &BoostedModel, model_id: usize) -> ManifestEntry {
        ManifestEntry {
            file: format!("model_{model_id:03}.json"),
            subcategory_id: m.subcategory_id,
            resolution_level: m.resolution_level,
            model_w: m.model_w,
            model_h: m.model_h,
            pad_w: m.pad_w,
            pad_h: m.pad_h,
            calib_min: m.calib_min,
            calib_max: m.calib_max,
        }
    }
}
