//! Observation-angle estimation from the vector of per-model detector
//! scores, by multiclass classification over angle bins or by regressing
//! `(cos, sin)`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::annotations::wrap_angle;
use crate::bbox::iou;
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::linear_models::{train_multiclass_cs, train_svr_l2, LinearModel, MulticlassModel, SvmParams};

pub use crate::evaluation::orientation_similarity;

pub const DEFAULT_BINS: usize = 25;
/// Boxes of a model must overlap the detection by more than this to vote.
pub const VOTE_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub detection: Detection,
}

/// Entry `k` is the best score of model `k` among its boxes overlapping
/// `det`, mapped through `bounds[k]` as `(s - lo) / (hi - lo)`, or 0 when
/// none overlaps.
pub fn score_vector(det: &Detection, per_model: &[Vec<Detection>], bounds: &[(f64, f64)]) -> Result<ScoreVector> {
    if bounds.len() != per_model.len() {
        return Err(Error::DimensionMismatch {
            expected: per_model.len(),
            got: bounds.len(),
        });
    }
    let values = per_model
        .iter()
        .zip(bounds)
        .map(|(dets, &(lo, hi))| {
            dets.iter()
                .filter(|d| iou(&det.bbox, &d.bbox) > VOTE_OVERLAP)
                .map(|d| d.score)
                .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
                .map_or(0.0, |s| (s - lo) / (hi - lo))
        })
        .collect();
    Ok(ScoreVector {
        values,
        detection: det.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OrientationKind {
    #[default]
    MulticlassSvm,
    Svr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    Classifier(MulticlassModel),
    /// Regressors for `cos` and `sin` of the angle.
    Regressor(LinearModel, LinearModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationModel {
    pub kind: OrientationKind,
    pub estimator: Estimator,
    /// Empty for regression.
    pub bin_centers: Vec<f64>,
    pub k: usize,
    /// Per-entry `(lo, hi)` of the training vectors.
    pub normalization: Vec<(f64, f64)>,
}

pub fn bin_centers(n_bins: usize) -> Vec<f64> {
    let w = TAU / n_bins as f64;
    (0..n_bins).map(|b| -PI + (b as f64 + 0.5) * w).collect()
}

pub fn angle_bin(alpha: f64, n_bins: usize) -> usize {
    let a = wrap_angle(alpha) + PI;
    ((a / (TAU / n_bins as f64)).floor() as usize).min(n_bins - 1)
}

fn fit_normalization(x: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let d = x[0].len();
    (0..d)
        .map(|j| {
            let lo = x.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo, lo + 1.0)
            }
        })
        .collect()
}

fn normalize(v: &[f64], norm: &[(f64, f64)]) -> Vec<f64> {
    v.iter().zip(norm).map(|(x, (lo, hi))| (x - lo) / (hi - lo)).collect()
}

/// `samples` pairs a score vector with the ground-truth observation angle
/// of the object it detected.
pub fn train_orientation(
    samples: &[(Vec<f64>, f64)],
    k: usize,
    kind: OrientationKind,
    n_bins: usize,
    params: &SvmParams,
) -> Result<OrientationModel> {
    if samples.is_empty() {
        return Err(Error::invalid("no orientation training samples"));
    }
    if let Some((v, _)) = samples.iter().find(|(v, _)| v.len() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: v.len() });
    }
    let raw: Vec<Vec<f64>> = samples.iter().map(|(v, _)| v.clone()).collect();
    let normalization = fit_normalization(&raw);
    let x: Vec<Vec<f64>> = raw.iter().map(|v| normalize(v, &normalization)).collect();
    match kind {
        OrientationKind::MulticlassSvm => {
            if n_bins < 2 {
                return Err(Error::invalid("need at least two angle bins"));
            }
            let y: Vec<usize> = samples.iter().map(|(_, a)| angle_bin(*a, n_bins)).collect();
            let mut classes = y.clone();
            classes.sort_unstable();
            classes.dedup();
            if classes.len() < 2 {
                return Err(Error::invalid("orientation training covers fewer than two angle bins"));
            }
            let (model, _) = train_multiclass_cs(&x, &y, &classes, params)?;
            Ok(OrientationModel {
                kind,
                estimator: Estimator::Classifier(model),
                bin_centers: bin_centers(n_bins),
                k,
                normalization,
            })
        }
        OrientationKind::Svr => {
            let yc: Vec<f64> = samples.iter().map(|(_, a)| a.cos()).collect();
            let ys: Vec<f64> = samples.iter().map(|(_, a)| a.sin()).collect();
            let mc = train_svr_l2(&x, &yc, params)?;
            let ms = train_svr_l2(&x, &ys, params)?;
            Ok(OrientationModel {
                kind,
                estimator: Estimator::Regressor(mc, ms),
                bin_centers: Vec::new(),
                k,
                normalization,
            })
        }
    }
}

impl OrientationModel {
    /// Angle in `(-pi, pi]`.
    pub fn estimate(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: v.len(),
            });
        }
        let x = normalize(v, &self.normalization);
        let a = match &self.estimator {
            Estimator::Classifier(m) => self.bin_centers[m.predict(&x)?],
            Estimator::Regressor(mc, ms) => ms.decision(&x)?.atan2(mc.decision(&x)?),
        };
        Ok(wrap_angle(a))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: OrientationModel = serde_json::from_str(s)?;
        if m.normalization.len() != m.k {
            return Err(Error::DimensionMismatch {
                expected: m.k,
                got: m.normalization.len(),
            });
        }
        Ok(m)
    }
}
