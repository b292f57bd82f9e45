//! Subcategory assignment: orientation/occlusion binning, k-means, spectral
//! clustering, and discriminative subcategorization.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::GeoFeatures;
use crate::bbox::BBox2D;
use crate::channels::CELL;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, SymEigen};
use crate::linear_models::{train_binary_svm, LinearModel, SvmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    Geometric,
    Visual,
    FusedAffinity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    pub source: FeatureSource,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>, source: FeatureSource) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).ok_or_else(|| Error::invalid("feature matrix has no rows"))?;
        for r in &rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Range("non-finite feature".into()));
            }
        }
        Ok(FeatureMatrix { rows, source })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn d(&self) -> usize {
        self.rows[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Strategy1,
    KMeans,
    Spectral,
    Dsc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Option<Vec<Vec<f64>>>,
    pub strategy: Strategy,
    /// `(B, M)` for orientation/occlusion binning.
    pub bins: Option<(usize, usize)>,
    pub split: bool,
    /// k-means: objective after each Lloyd step. DSC: summed best score
    /// after each reassignment, before size repair.
    pub objective_trace: Vec<f64>,
    /// Empty-cluster repairs (k-means) or starved-cluster refills (DSC).
    pub repairs: usize,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }

    /// Drop empty clusters and relabel the rest in increasing id order.
    /// Returns the old id of each new cluster.
    pub fn compact(&mut self) -> Vec<usize> {
        let sizes = self.sizes();
        let kept: Vec<usize> = (0..self.k).filter(|&c| sizes[c] > 0).collect();
        let mut remap = vec![usize::MAX; self.k];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        for a in &mut self.assignments {
            *a = remap[*a];
        }
        if let Some(c) = &mut self.centroids {
            *c = kept.iter().map(|&o| c[o].clone()).collect();
        }
        self.k = kept.len();
        kept
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeanspp(x: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut centroids = vec![x[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = x[pick].clone();
        for (i, r) in x.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn mean_of(x: &[Vec<f64>], members: &[usize], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for &i in members {
        for (a, v) in m.iter_mut().zip(&x[i]) {
            *a += v;
        }
    }
    let n = members.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

pub fn kmeans(x: &FeatureMatrix, k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    let n = x.n();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {n}]")));
    }
    let d = x.d();
    let rows = &x.rows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp(rows, k, &mut rng);
    let mut assign: Vec<usize> = rows.iter().map(|r| nearest(&centroids, r).0).collect();
    let mut trace = Vec::new();
    let mut repairs = 0;

    for it in 0..max_iters.max(1) {
        // repair empties by moving the worst-fit point of a cluster that can spare it
        loop {
            let mut sizes = vec![0usize; k];
            for &a in &assign {
                sizes[a] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let mut far = None;
            let mut far_d = -1.0;
            for (i, r) in rows.iter().enumerate() {
                if sizes[assign[i]] < 2 {
                    continue;
                }
                let dd = sq_dist(r, &centroids[assign[i]]);
                if dd > far_d {
                    far_d = dd;
                    far = Some(i);
                }
            }
            let i = far.expect("k <= n leaves a donor");
            assign[i] = empty;
            repairs += 1;
        }
        let mut members = vec![Vec::new(); k];
        for (i, &a) in assign.iter().enumerate() {
            members[a].push(i);
        }
        centroids = members.iter().map(|m| mean_of(rows, m, d)).collect();
        let obj: f64 = rows
            .iter()
            .zip(&assign)
            .map(|(r, &a)| sq_dist(r, &centroids[a]))
            .sum();
        trace.push(obj);
        let next: Vec<usize> = rows
            .iter()
            .zip(&assign)
            .map(|(r, &a)| {
                // keep the current label unless something is strictly closer
                let (j, dj) = nearest(&centroids, r);
                if dj < sq_dist(r, &centroids[a]) {
                    j
                } else {
                    a
                }
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        if it + 1 == max_iters {
            log::debug!("kmeans stopped at iteration cap {max_iters}");
        }
    }
    Ok(ClusterModel {
        k,
        assignments: assign,
        centroids: Some(centroids),
        strategy: Strategy::KMeans,
        bins: None,
        split: false,
        objective_trace: trace,
        repairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub sigma: f64,
    pub k: usize,
    /// Above this many rows, cluster a seeded subsample and extend the
    /// labels by nearest centroid.
    pub max_points: usize,
}

impl SpectralConfig {
    pub fn new(sigma: f64, k: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        Ok(SpectralConfig {
            sigma,
            k,
            max_points: 4000,
        })
    }

    /// Bandwidth from the median pairwise distance.
    pub fn median_heuristic(x: &FeatureMatrix, k: usize) -> Result<Self> {
        let s = median_pairwise_distance(&x.rows);
        Self::new(if s > 0.0 { s } else { 1.0 }, k)
    }
}

pub fn median_pairwise_distance(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    // cap the sample so the heuristic stays cheap on large sets
    let m = n.min(1000);
    let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            d.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    d[d.len() / 2]
}

/// Row-major `n x n` Gaussian affinity with a zero diagonal.
pub fn gaussian_affinity(rows: &[Vec<f64>], sigma: f64) -> Vec<f64> {
    let n = rows.len();
    let denom = 2.0 * sigma * sigma;
    let mut w = vec![0.0; n * n];
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| (-sq_dist(&rows[i], &rows[j]) / denom).exp())
                .collect()
        })
        .collect();
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    w
}

pub fn fuse_affinities(w_geo: &[f64], w_vis: &[f64], weight_geo: f64) -> Result<Vec<f64>> {
    if w_geo.len() != w_vis.len() {
        return Err(Error::DimensionMismatch {
            expected: w_geo.len(),
            got: w_vis.len(),
        });
    }
    if !(0.0..=1.0).contains(&weight_geo) {
        return Err(Error::Config("fusion weight must lie in [0, 1]".into()));
    }
    Ok(w_geo
        .iter()
        .zip(w_vis)
        .map(|(g, v)| weight_geo * g + (1.0 - weight_geo) * v)
        .collect())
}

/// Normalized Laplacian, its eigenpairs, and the row-normalized embedding.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    pub n: usize,
    pub laplacian: Vec<f64>,
    pub eigen: SymEigen,
    pub rows: Vec<Vec<f64>>,
}

pub fn normalized_laplacian(w: &[f64], n: usize) -> Vec<f64> {
    let mut deg: Vec<f64> = (0..n).map(|i| w[i * n..(i + 1) * n].iter().sum()).collect();
    for (i, d) in deg.iter_mut().enumerate() {
        if *d < 1e-12 {
            log::warn!("vertex {i} is isolated; degree floored at 1e-12");
            *d = 1e-12;
        }
    }
    let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = -inv[i] * w[i * n + j] * inv[j];
            l[i * n + j] = if i == j { 1.0 + v } else { v };
        }
    }
    l
}

pub fn spectral_embedding(w: &[f64], n: usize, k: usize) -> Result<SpectralEmbedding> {
    if w.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: w.len(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {n}]")));
    }
    let laplacian = normalized_laplacian(w, n);
    let eigen = symmetric_eigen(&laplacian, n);
    let rows = (0..n)
        .map(|i| {
            let r: Vec<f64> = (0..k).map(|j| eigen.vectors[j][i]).collect();
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.iter().map(|v| v / norm).collect()
            } else {
                r
            }
        })
        .collect();
    Ok(SpectralEmbedding {
        n,
        laplacian,
        eigen,
        rows,
    })
}

/// Spectral clustering of a precomputed affinity matrix.
pub fn spectral_from_affinity(w: &[f64], n: usize, k: usize, seed: u64) -> Result<ClusterModel> {
    let emb = spectral_embedding(w, n, k)?;
    let fm = FeatureMatrix::new(emb.rows, FeatureSource::FusedAffinity)?;
    let mut m = kmeans(&fm, k, seed, 300)?;
    m.strategy = Strategy::Spectral;
    m.centroids = None;
    Ok(m)
}

pub fn spectral_cluster(x: &FeatureMatrix, cfg: &SpectralConfig, seed: u64) -> Result<ClusterModel> {
    let n = x.n();
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::invalid(format!("k = {} must lie in [1, {n}]", cfg.k)));
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::Config("sigma must be positive".into()));
    }
    let cap = cfg.max_points.max(cfg.k);
    let subset: Vec<usize> = if n > cap {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        idx.truncate(cap);
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let rows: Vec<Vec<f64>> = subset.iter().map(|&i| x.rows[i].clone()).collect();
    let w = gaussian_affinity(&rows, cfg.sigma);
    let sub = spectral_from_affinity(&w, rows.len(), cfg.k, seed)?;
    let d = x.d();
    let mut members = vec![Vec::new(); cfg.k];
    for (i, &a) in sub.assignments.iter().enumerate() {
        members[a].push(i);
    }
    let centroids: Vec<Vec<f64>> = members.iter().map(|m| mean_of(&rows, m, d)).collect();
    let assignments = if subset.len() == n {
        sub.assignments.clone()
    } else {
        let mut a = vec![0; n];
        let mut in_sub = vec![None; n];
        for (j, &i) in subset.iter().enumerate() {
            in_sub[i] = Some(j);
        }
        for i in 0..n {
            a[i] = match in_sub[i] {
                Some(j) => sub.assignments[j],
                None => nearest(&centroids, &x.rows[i]).0,
            };
        }
        a
    };
    Ok(ClusterModel {
        k: cfg.k,
        assignments,
        centroids: Some(centroids),
        strategy: Strategy::Spectral,
        bins: None,
        split: false,
        objective_trace: sub.objective_trace,
        repairs: sub.repairs,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit normal of a linear SVM separating `xpos` from `xneg`, with its bias
/// divided by the same norm.
pub fn linear_svm_direction(xpos: &[Vec<f64>], xneg: &[Vec<f64>], params: &SvmParams) -> Result<(Vec<f64>, f64)> {
    if xpos.is_empty() || xneg.is_empty() {
        return Err(Error::invalid("both positive and negative sets are required"));
    }
    let mut x = xpos.to_vec();
    x.extend(xneg.iter().cloned());
    let mut y = vec![1.0; xpos.len()];
    y.extend(std::iter::repeat(-1.0).take(xneg.len()));
    let m = train_binary_svm(&x, &y, params)?;
    let n = norm(&m.weights);
    if n < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "SVM direction vanished; inputs are indistinguishable".into(),
        ));
    }
    Ok((m.weights.iter().map(|v| v / n).collect(), m.bias / n))
}

pub fn residual_projection(x: &FeatureMatrix, w: &[f64]) -> Result<FeatureMatrix> {
    if w.len() != x.d() {
        return Err(Error::DimensionMismatch {
            expected: x.d(),
            got: w.len(),
        });
    }
    if (norm(w) - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("projection direction must have unit length"));
    }
    let rows = x
        .rows
        .iter()
        .map(|r| {
            let p: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
            r.iter().zip(w).map(|(a, b)| a - p * b).collect()
        })
        .collect();
    FeatureMatrix::new(rows, x.source)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DscConfig {
    pub rounds: usize,
    pub svm: SvmParams,
    /// Minimum cluster size; `None` uses `max(20, 0.01 n)`. Either way it
    /// is clamped to `n / k` so the constraint stays satisfiable.
    pub m_min: Option<usize>,
}

impl Default for DscConfig {
    fn default() -> Self {
        DscConfig {
            rounds: 10,
            svm: SvmParams {
                max_epochs: 200,
                ..SvmParams::default()
            },
            m_min: None,
        }
    }
}

pub fn dsc_min_size(n: usize, k: usize, requested: Option<usize>) -> usize {
    let m = requested.unwrap_or_else(|| 20usize.max((0.01 * n as f64).ceil() as usize));
    m.min(n / k.max(1)).max(1)
}

fn train_cluster_svms(
    xpos: &[Vec<f64>],
    xneg: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    params: &SvmParams,
) -> Result<Vec<LinearModel>> {
    (0..k)
        .into_par_iter()
        .map(|c| {
            let mut x: Vec<Vec<f64>> = xpos
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(r, _)| r.clone())
                .collect();
            let np = x.len();
            x.extend(xneg.iter().cloned());
            let mut y = vec![1.0; np];
            y.extend(std::iter::repeat(-1.0).take(xneg.len()));
            let p = SvmParams {
                seed: params.seed.wrapping_add(c as u64),
                ..params.clone()
            };
            train_binary_svm(&x, &y, &p)
        })
        .collect()
}

/// Alternate per-cluster SVM training and reassignment of positives to
/// their best-scoring cluster.
pub fn dsc(
    xpos: &FeatureMatrix,
    xneg: &FeatureMatrix,
    k: usize,
    init: &ClusterModel,
    cfg: &DscConfig,
) -> Result<ClusterModel> {
    let n = xpos.n();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} positives")));
    }
    if init.k != k || init.assignments.len() != n {
        return Err(Error::invalid("initial clustering does not match the positives"));
    }
    if xneg.d() != xpos.d() {
        return Err(Error::DimensionMismatch {
            expected: xpos.d(),
            got: xneg.d(),
        });
    }
    let m_min = dsc_min_size(n, k, cfg.m_min);
    let mut labels = init.assignments.clone();
    let mut trace = Vec::new();
    let mut repairs = 0;
    // make sure every cluster starts with at least one member
    let sizes = {
        let mut s = vec![0; k];
        labels.iter().for_each(|&l| s[l] += 1);
        s
    };
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("initial clustering has an empty cluster"));
    }

    for _round in 0..cfg.rounds.max(1) {
        let models = train_cluster_svms(&xpos.rows, &xneg.rows, &labels, k, &cfg.svm)?;
        let scores: Vec<Vec<f64>> = xpos
            .rows
            .iter()
            .map(|r| {
                models
                    .iter()
                    .map(|m| m.decision(r).expect("dimension checked"))
                    .collect()
            })
            .collect();
        let mut next: Vec<usize> = scores
            .iter()
            .map(|s| {
                let mut best = 0;
                for j in 1..k {
                    if s[j] > s[best] {
                        best = j;
                    }
                }
                best
            })
            .collect();
        trace.push(scores.iter().zip(&next).map(|(s, &j)| s[j]).sum());
        repairs += enforce_min_size(&mut next, &scores, k, m_min);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(ClusterModel {
        k,
        assignments: labels,
        centroids: None,
        strategy: Strategy::Dsc,
        bins: None,
        split: false,
        objective_trace: trace,
        repairs,
    })
}

/// Refill clusters below `m_min` with the outsiders their SVM scores
/// highest, taking only from clusters that stay at or above `m_min`.
fn enforce_min_size(labels: &mut [usize], scores: &[Vec<f64>], k: usize, m_min: usize) -> usize {
    let mut moved = 0;
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    for c in 0..k {
        if sizes[c] >= m_min {
            continue;
        }
        let mut outsiders: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != c).collect();
        outsiders.sort_by(|&a, &b| scores[b][c].total_cmp(&scores[a][c]).then(a.cmp(&b)));
        for i in outsiders {
            if sizes[c] >= m_min {
                break;
            }
            let from = labels[i];
            if sizes[from] > m_min {
                labels[i] = c;
                sizes[from] -= 1;
                sizes[c] += 1;
                moved += 1;
            }
        }
    }
    moved
}

/// Occlusion bin upper edges used by the split configuration.
pub const SPLIT_OCCLUSION_EDGE: f64 = 0.10;

pub fn orientation_bin(alpha: f64, b: usize) -> usize {
    let t = (alpha + std::f64::consts::PI) / std::f64::consts::TAU;
    ((b as f64 * t).floor().max(0.0) as usize).min(b - 1)
}

pub fn strategy1_bins(features: &[GeoFeatures], b: usize, m: usize, split: bool) -> Result<ClusterModel> {
    if b == 0 || m == 0 {
        return Err(Error::Config("bin counts must be at least 1".into()));
    }
    let occ_bins = if split { 2 } else { m };
    let max_level = features.iter().map(|f| f.occlusion_level).fold(0.0, f64::max);
    let assignments = features
        .iter()
        .map(|f| {
            let ob = orientation_bin(f.angle(), b);
            let cb = if split {
                usize::from(f.occlusion_level > SPLIT_OCCLUSION_EDGE)
            } else if max_level > 0.0 {
                ((m as f64 * f.occlusion_level / max_level).floor() as usize).min(m - 1)
            } else {
                0
            };
            ob * occ_bins + cb
        })
        .collect();
    Ok(ClusterModel {
        k: b * occ_bins,
        assignments,
        centroids: None,
        strategy: Strategy::Strategy1,
        bins: Some((b, m)),
        split,
        objective_trace: Vec::new(),
        repairs: 0,
    })
}

pub fn standardize(x: &FeatureMatrix) -> (FeatureMatrix, Vec<f64>, Vec<f64>) {
    let n = x.n() as f64;
    let d = x.d();
    let mut means = vec![0.0; d];
    for r in &x.rows {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; d];
    for r in &x.rows {
        for j in 0..d {
            stds[j] += (r[j] - means[j]).powi(2);
        }
    }
    stds.iter_mut().for_each(|s| *s = (*s / n).sqrt().max(1e-12));
    let rows = x
        .rows
        .iter()
        .map(|r| (0..d).map(|j| (r[j] - means[j]) / stds[j]).collect())
        .collect();
    (
        FeatureMatrix {
            rows,
            source: x.source,
        },
        means,
        stds,
    )
}

pub fn destandardize(x: &FeatureMatrix, means: &[f64], stds: &[f64]) -> FeatureMatrix {
    FeatureMatrix {
        rows: x
            .rows
            .iter()
            .map(|r| r.iter().zip(means.iter().zip(stds)).map(|(v, (m, s))| v * s + m).collect())
            .collect(),
        source: x.source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub model_w: usize,
    pub model_h: usize,
    pub pad_w: usize,
    pub pad_h: usize,
    /// Median object h/w of the cluster. The object box keeps this aspect
    /// so that rounding the template to cells does not distort it; 0 falls
    /// back to the padded box.
    #[serde(default)]
    pub aspect: f64,
}

impl ModelDims {
    /// Object box inside the template, in template pixels.
    pub fn object_box(&self) -> (f64, f64, f64, f64) {
        let x0 = self.pad_w as f64 / 2.0;
        if self.aspect > 0.0 {
            let h = (self.model_w - self.pad_w) as f64 * self.aspect;
            let y0 = (self.model_h as f64 - h) / 2.0;
            return (x0, y0, self.model_w as f64 - x0, y0 + h);
        }
        let y0 = self.pad_h as f64 / 2.0;
        (x0, y0, self.model_w as f64 - x0, self.model_h as f64 - y0)
    }

    pub fn cells(&self) -> (usize, usize) {
        (self.model_w / CELL, self.model_h / CELL)
    }

    pub fn n_features(&self) -> usize {
        let (w, h) = self.cells();
        w * h * crate::channels::N_CHANNELS
    }
}

fn round_cells(v: f64) -> usize {
    ((v / CELL as f64).round() as usize) * CELL
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Template size from the median aspect of a cluster's boxes. The width is
/// fixed; padding is `1/8` of each template side, rounded to whole cells,
/// and sits inside the template around the object.
pub fn model_dims_for_cluster(samples: &[BBox2D], base_width: usize) -> Result<ModelDims> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot size a model for an empty cluster"));
    }
    if base_width % CELL != 0 || base_width == 0 {
        return Err(Error::Config(format!("base width {base_width} is not a multiple of {CELL}")));
    }
    let mut aspects: Vec<f64> = samples.iter().map(|b| b.height() / b.width()).collect();
    let aspect = median(&mut aspects);
    let model_w = base_width;
    let model_h = round_cells(base_width as f64 * aspect).max(CELL);
    Ok(ModelDims {
        model_w,
        model_h,
        pad_w: round_cells(model_w as f64 / 8.0),
        pad_h: round_cells(model_h as f64 / 8.0),
        aspect,
    })
}

/// Agreement between two labelings, 1 for identical partitions.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, f64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let c2 = |v: f64| v * (v - 1.0) / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Per-sample CSV: `sample_id,cluster,observation_angle,occlusion_level,truncation`.
pub fn write_cluster_report(path: &Path, model: &ClusterModel, geo: &[GeoFeatures]) -> Result<()> {
    let mut s = String::from("sample_id,cluster,observation_angle,occlusion_level,truncation\n");
    for (i, (c, g)) in model.assignments.iter().zip(geo).enumerate() {
        s.push_str(&format!(
            "{i},{c},{:.6},{:.6},{:.6}\n",
            g.angle(),
            g.occlusion_level,
            g.truncation
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub const SUMMARY_ORIENT_BINS: usize = 36;

/// Per-cluster CSV: size, mean aspect (h/w) and a 36-bin orientation histogram.
pub fn write_cluster_summary(path: &Path, model: &ClusterModel, geo: &[GeoFeatures]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut header = String::from("cluster,size,mean_aspect");
    for b in 0..SUMMARY_ORIENT_BINS {
        header.push_str(&format!(",o{b}"));
    }
    let mut out = header + "\n";
    for c in 0..model.k {
        let members: Vec<&GeoFeatures> = model
            .assignments
            .iter()
            .zip(geo)
            .filter(|(&a, _)| a == c)
            .map(|(_, g)| g)
            .collect();
        let mean_aspect = if members.is_empty() {
            0.0
        } else {
            members.iter().map(|g| 1.0 / g.aspect_ratio).sum::<f64>() / members.len() as f64
        };
        let mut hist = [0usize; SUMMARY_ORIENT_BINS];
        for g in &members {
            hist[orientation_bin(g.angle(), SUMMARY_ORIENT_BINS)] += 1;
        }
        out.push_str(&format!("{c},{},{mean_aspect:.6}", members.len()));
        for h in hist {
            out.push_str(&format!(",{h}"));
        }
        out.push('\n');
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn geo(alpha: f64, level: f64) -> GeoFeatures {
        GeoFeatures {
            observation_angle: [alpha.cos(), alpha.sin()],
            aspect_ratio: 1.0,
            truncation: 0.0,
            occlusion_level: level,
            occlusion_type: [0.0; 4],
            rel_orientation: [0.0; 2],
            occluder_orientation: [0.0; 2],
            rel_position: [0.0; 3],
            occluder_side: 0.0,
            has_occluder: 0.0,
        }
    }

    #[test]
    fn strategy1_examples() {
        let m = strategy1_bins(&[geo(-PI + 0.01, 0.0)], 4, 1, false).unwrap();
        assert_eq!(m.assignments, vec![0]);
        let fs = vec![geo(0.0, 0.6), geo(1.0, 0.8)];
        let m = strategy1_bins(&fs, 10, 2, false).unwrap();
        assert_eq!(m.assignments[0], 11);
        let m = strategy1_bins(&fs, 1, 1, false).unwrap();
        assert_eq!(m.assignments, vec![0, 0]);
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let x = FeatureMatrix::new(vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]], FeatureSource::Geometric).unwrap();
        let m = kmeans(&x, 1, 0, 10).unwrap();
        assert_eq!(m.centroids.unwrap()[0], vec![2.0, 4.0]);
    }

    #[test]
    fn kmeans_identical_rows_repairs() {
        let x = FeatureMatrix::new(vec![vec![1.0, 1.0]; 6], FeatureSource::Geometric).unwrap();
        let m = kmeans(&x, 2, 3, 10).unwrap();
        assert!(m.repairs >= 1);
        assert!(m.sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn model_dims_examples() {
        let sq = [BBox2D::new(0.0, 0.0, 50.0, 50.0).unwrap()];
        assert_eq!(
            model_dims_for_cluster(&sq, 32).unwrap(),
            ModelDims { model_w: 32, model_h: 32, pad_w: 4, pad_h: 4, aspect: 1.0 }
        );
        let r = [BBox2D::new(0.0, 0.0, 40.0, 30.0).unwrap()];
        let d = model_dims_for_cluster(&r, 32).unwrap();
        assert_eq!((d.model_w, d.model_h, d.pad_w, d.pad_h), (32, 24, 4, 4));
        assert_eq!(ModelDims { model_w: 32, model_h: 32, pad_w: 4, pad_h: 4, aspect: 1.0 }.n_features(), 640);
        assert!(model_dims_for_cluster(&[], 32).is_err());
    }

    #[test]
    fn standardize_round_trip() {
        let x = FeatureMatrix::new(vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![8.0, 5.0]], FeatureSource::Geometric).unwrap();
        let (s, m, sd) = standardize(&x);
        assert!(s.rows.iter().all(|r| r[1] == 0.0));
        let back = destandardize(&s, &m, &sd);
        for (a, b) in back.rows.iter().flatten().zip(x.rows.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fuse_weights() {
        let a = vec![1.0, 0.0, 0.0, 1.0];
        let b = vec![0.0, 1.0, 1.0, 0.0];
        assert_eq!(fuse_affinities(&a, &b, 1.0).unwrap(), a);
        assert_eq!(fuse_affinities(&a, &b, 0.0).unwrap(), b);
        assert_eq!(fuse_affinities(&a, &b, 0.5).unwrap(), vec![0.5; 4]);
        assert!(fuse_affinities(&a, &b[..2], 0.5).is_err());
    }

    #[test]
    fn residual_is_orthogonal() {
        let w = vec![0.6, 0.8];
        let x = FeatureMatrix::new(vec![vec![3.0, 4.0], vec![-0.8, 0.6], vec![1.5, -2.0]], FeatureSource::Visual).unwrap();
        let r = residual_projection(&x, &w).unwrap();
        assert!(r.rows[0].iter().all(|v| v.abs() < 1e-12));
        assert_eq!(r.rows[1], x.rows[1]);
        let dot: f64 = r.rows[2].iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-9);
    }

    #[test]
    fn ari_bounds() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.1);
    }
}
