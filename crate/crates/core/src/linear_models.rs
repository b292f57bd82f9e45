//! Linear learners trained by dual coordinate descent: the hinge-loss
//! binary SVM, the Crammer-Singer multiclass SVM, and L2-regularized
//! L2-loss support vector regression.
//!
//! The bias is learned as the weight of an appended constant feature and is
//! therefore regularized along with the other weights. Every objective below
//! includes `b^2 / 2` in its regularizer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Loss trade-off.
    pub c: f64,
    /// Insensitivity width (regression only).
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Stop when `primal - dual <= tol * max(1, primal)`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            epsilon: 0.1,
            max_epochs: 1000,
            tol: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Hinge,
    SvrL2,
    CrammerSinger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub version: u32,
    pub objective: Objective,
    pub c: f64,
    pub epsilon: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub version: u32,
    pub c: f64,
    /// `class_weights[k]` scores `classes[k]`.
    pub class_weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub classes: Vec<usize>,
}

/// Optimizer diagnostics, one entry per completed epoch.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
    /// Final dual variables (binary SVM: one per sample).
    pub alphas: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map(|r| r.len()).ok_or_else(|| Error::invalid("empty training set"))?;
    for r in x {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("non-finite feature value".into()));
        }
    }
    Ok(d)
}

/// `w . x + b` with `w` holding the bias in its last slot.
#[inline]
fn aug_dot(w: &[f64], x: &[f64]) -> f64 {
    dot(&w[..x.len()], x) + w[x.len()]
}

#[inline]
fn aug_axpy(w: &mut [f64], a: f64, x: &[f64]) {
    for (wi, xi) in w.iter_mut().zip(x) {
        *wi += a * xi;
    }
    let d = x.len();
    w[d] += a;
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: LinearModel = serde_json::from_str(s)?;
        if m.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", m.version)));
        }
        Ok(m)
    }
}

impl MulticlassModel {
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.class_weights[0].len();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        Ok(self
            .class_weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, x) + b)
            .collect())
    }

    /// Class label with the highest score; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let s = self.scores(x)?;
        let mut best = 0;
        for k in 1..s.len() {
            if s[k] > s[best] {
                best = k;
            }
        }
        Ok(self.classes[best])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MulticlassModel = serde_json::from_str(s)?;
        if m.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", m.version)));
        }
        Ok(m)
    }
}

/// Hinge-loss primal `1/2 |w|^2 + C sum max(0, 1 - y f(x))`.
pub fn hinge_primal(w_aug: &[f64], x: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let reg = 0.5 * dot(w_aug, w_aug);
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (1.0 - yi * aug_dot(w_aug, xi)).max(0.0))
        .sum();
    reg + c * loss
}

pub fn train_binary_svm(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<LinearModel> {
    train_binary_svm_traced(x, y, params).map(|(m, _)| m)
}

/// Dual coordinate descent for the hinge-loss SVM with labels in `{-1, +1}`.
pub fn train_binary_svm_traced(
    x: &[Vec<f64>],
    y: &[f64],
    params: &SvmParams,
) -> Result<(LinearModel, TrainTrace)> {
    let d = check_rows(x)?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("binary labels must be -1 or +1"));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::invalid("binary SVM needs both classes"));
    }
    if !(params.c > 0.0) {
        return Err(Error::Config("C must be positive".into()));
    }
    let n = x.len();
    let c = params.c;
    let qd: Vec<f64> = x.iter().map(|r| dot(r, r) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trace = TrainTrace::default();

    for _epoch in 0..params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = y[i] * aug_dot(&w, &x[i]) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            if pg.abs() > 1e-15 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y[i];
                if delta != 0.0 {
                    aug_axpy(&mut w, delta, &x[i]);
                }
            }
        }
        let primal = hinge_primal(&w, x, y, c);
        let dual = alpha.iter().sum::<f64>() - 0.5 * dot(&w, &w);
        trace.primal.push(primal);
        trace.dual.push(dual);
        if primal - dual <= params.tol * primal.abs().max(1.0) {
            trace.converged = true;
            break;
        }
    }
    trace.alphas = alpha;
    let bias = w[d];
    w.truncate(d);
    Ok((
        LinearModel {
            version: FORMAT_VERSION,
            objective: Objective::Hinge,
            c,
            epsilon: 0.0,
            weights: w,
            bias,
        },
        trace,
    ))
}

/// L2-loss SVR primal `1/2 |w|^2 + C sum max(0, |y - f(x)| - eps)^2`.
pub fn svr_primal(w_aug: &[f64], x: &[Vec<f64>], y: &[f64], c: f64, eps: f64) -> f64 {
    let reg = 0.5 * dot(w_aug, w_aug);
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let r = ((yi - aug_dot(w_aug, xi)).abs() - eps).max(0.0);
            r * r
        })
        .sum();
    reg + c * loss
}

pub fn train_svr_l2(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<LinearModel> {
    train_svr_l2_traced(x, y, params).map(|(m, _)| m)
}

/// Dual coordinate descent for L2-regularized L2-loss SVR.
pub fn train_svr_l2_traced(
    x: &[Vec<f64>],
    y: &[f64],
    params: &SvmParams,
) -> Result<(LinearModel, TrainTrace)> {
    let d = check_rows(x)?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("SVR needs at least two samples"));
    }
    if !(params.c > 0.0) || !(params.epsilon >= 0.0) {
        return Err(Error::Config("SVR needs C > 0 and epsilon >= 0".into()));
    }
    let n = x.len();
    let (c, eps) = (params.c, params.epsilon);
    let lambda = 0.5 / c;
    let qd: Vec<f64> = x.iter().map(|r| dot(r, r) + 1.0 + lambda).collect();
    let mut beta = vec![0.0; n];
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trace = TrainTrace::default();

    for _epoch in 0..params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = -y[i] + lambda * beta[i] + aug_dot(&w, &x[i]);
            let h = qd[i];
            let gp = g + eps;
            let gn = g - eps;
            let step = if gp < h * beta[i] {
                -gp / h
            } else if gn > h * beta[i] {
                -gn / h
            } else {
                -beta[i]
            };
            if step.abs() > 1e-15 {
                beta[i] += step;
                aug_axpy(&mut w, step, &x[i]);
            }
        }
        let primal = svr_primal(&w, x, y, c, eps);
        // dual objective in maximization form
        let dual = -(0.5 * dot(&w, &w) - dot(y, &beta)
            + eps * beta.iter().map(|b| b.abs()).sum::<f64>()
            + 0.5 * lambda * dot(&beta, &beta));
        trace.primal.push(primal);
        trace.dual.push(dual);
        if primal - dual <= params.tol * primal.abs().max(1.0) {
            trace.converged = true;
            break;
        }
    }
    trace.alphas = beta;
    let bias = w[d];
    w.truncate(d);
    Ok((
        LinearModel {
            version: FORMAT_VERSION,
            objective: Objective::SvrL2,
            c,
            epsilon: eps,
            weights: w,
            bias,
        },
        trace,
    ))
}

/// Crammer-Singer primal
/// `1/2 sum_m |w_m|^2 + C sum_i max_m (1[m != y_i] + f_m(x_i) - f_{y_i}(x_i))`.
pub fn crammer_singer_primal(w: &[Vec<f64>], x: &[Vec<f64>], y: &[usize], c: f64) -> f64 {
    let reg: f64 = w.iter().map(|wm| 0.5 * dot(wm, wm)).sum();
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let fy = aug_dot(&w[yi], xi);
            w.iter()
                .enumerate()
                .map(|(m, wm)| (if m == yi { 0.0 } else { 1.0 }) + aug_dot(wm, xi) - fy)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    reg + c * loss
}

/// Exact minimizer of one sample's sub-problem in the sequential dual
/// method: `alpha_m <= C [m == y]`, `sum_m alpha_m = 0`.
fn solve_sub_problem(a_i: f64, yi: usize, c: f64, b: &[f64], out: &mut [f64]) {
    let k = b.len();
    let mut d = b.to_vec();
    d[yi] += a_i * c;
    d.sort_by(|p, q| q.total_cmp(p));
    let mut beta = d[0] - a_i * c;
    let mut r = 1;
    while r < k && beta < r as f64 * d[r] {
        beta += d[r];
        r += 1;
    }
    beta /= r as f64;
    for m in 0..k {
        let v = (beta - b[m]) / a_i;
        out[m] = if m == yi { v.min(c) } else { v.min(0.0) };
    }
}

/// Crammer-Singer multiclass SVM. `classes` lists every label that must be
/// represented; each `y[i]` must be one of them.
pub fn train_multiclass_cs(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[usize],
    params: &SvmParams,
) -> Result<(MulticlassModel, TrainTrace)> {
    let d = check_rows(x)?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let k = classes.len();
    if k < 2 {
        return Err(Error::invalid("multiclass SVM needs at least two classes"));
    }
    let mut idx = Vec::with_capacity(y.len());
    for &label in y {
        let pos = classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::invalid(format!("label {label} not in class list")))?;
        idx.push(pos);
    }
    for (j, cl) in classes.iter().enumerate() {
        if !idx.contains(&j) {
            return Err(Error::invalid(format!("class {cl} has no samples")));
        }
    }
    if !(params.c > 0.0) {
        return Err(Error::Config("C must be positive".into()));
    }
    let n = x.len();
    let c = params.c;
    let qd: Vec<f64> = x.iter().map(|r| dot(r, r) + 1.0).collect();
    let mut alpha = vec![0.0; n * k];
    let mut w = vec![vec![0.0; d + 1]; k];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trace = TrainTrace::default();
    let mut b = vec![0.0; k];
    let mut new_alpha = vec![0.0; k];

    for _epoch in 0..params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let yi = idx[i];
            let a_i = qd[i];
            let ai = &mut alpha[i * k..(i + 1) * k];
            for m in 0..k {
                let g = (if m == yi { 0.0 } else { 1.0 }) + aug_dot(&w[m], &x[i]);
                b[m] = g - a_i * ai[m];
            }
            solve_sub_problem(a_i, yi, c, &b, &mut new_alpha);
            for m in 0..k {
                let delta = new_alpha[m] - ai[m];
                if delta.abs() > 1e-15 {
                    ai[m] = new_alpha[m];
                    aug_axpy(&mut w[m], delta, &x[i]);
                }
            }
        }
        let primal = crammer_singer_primal(&w, x, &idx, c);
        let lin: f64 = (0..n)
            .map(|i| {
                (0..k)
                    .filter(|&m| m != idx[i])
                    .map(|m| alpha[i * k + m])
                    .sum::<f64>()
            })
            .sum();
        let reg: f64 = w.iter().map(|wm| 0.5 * dot(wm, wm)).sum();
        let dual = -(reg + lin);
        trace.primal.push(primal);
        trace.dual.push(dual);
        if primal - dual <= params.tol * primal.abs().max(1.0) {
            trace.converged = true;
            break;
        }
    }
    trace.alphas = alpha;
    let biases = w.iter().map(|wm| wm[d]).collect();
    let class_weights = w
        .into_iter()
        .map(|mut wm| {
            wm.truncate(d);
            wm
        })
        .collect();
    Ok((
        MulticlassModel {
            version: FORMAT_VERSION,
            c,
            class_weights,
            biases,
            classes: classes.to_vec(),
        },
        trace,
    ))
}
