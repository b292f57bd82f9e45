//! Sliding-window evaluation of boosted models over a shared channel
//! pyramid, score calibration, greedy NMS and ensemble pooling.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::{overlap, BBox2D, OverlapMode};
use crate::boosting::BoostedModel;
use crate::channels::{build_pyramid, ChannelPyramid, ChannelStack, PyramidConfig, CELL};
use crate::clustering::ModelDims;
use crate::error::{Error, Result};
use crate::image::Image;

/// Model widths relative to the base width: `w, 5/4 w, 3/2 w, 2 w, 3 w`.
pub const RESOLUTION_FACTORS: [f64; 5] = [1.0, 1.25, 1.5, 2.0, 3.0];

/// Resolution level indices used by a hybrid set of `count` widths.
pub fn hybrid_levels(count: usize) -> Result<Vec<usize>> {
    match count {
        1 => Ok(vec![0]),
        3 => Ok(vec![0, 1, 2]),
        5 => Ok(vec![0, 1, 2, 3, 4]),
        _ => Err(Error::Config(format!("resolution count must be 1, 3 or 5, got {count}"))),
    }
}

pub fn hybrid_resolution_set(base_w: usize, count: usize) -> Result<Vec<usize>> {
    Ok(hybrid_levels(count)?
        .into_iter()
        .map(|l| resolution_width(base_w, l))
        .collect())
}

pub fn resolution_width(base_w: usize, level: usize) -> usize {
    (base_w as f64 * RESOLUTION_FACTORS[level]).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox2D,
    pub score: f64,
    pub model_id: usize,
    pub resolution_level: usize,
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub models: Vec<BoostedModel>,
    pub nms_overlap: f64,
    pub nms_mode: OverlapMode,
    pub calibrate: bool,
    /// In cells.
    pub stride: usize,
    pub pyramid: PyramidConfig,
}

impl EnsembleSpec {
    pub fn new(models: Vec<BoostedModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one model"));
        }
        let levels: std::collections::BTreeSet<usize> = models.iter().map(|m| m.resolution_level).collect();
        let mut spec = EnsembleSpec {
            models,
            nms_overlap: 0.3,
            nms_mode: OverlapMode::IoU,
            calibrate: levels.len() > 1,
            stride: 1,
            pyramid: PyramidConfig::default(),
        };
        spec.pyramid.min_window = spec.min_window();
        Ok(spec)
    }

    /// Smallest model extent in each dimension.
    pub fn min_window(&self) -> (usize, usize) {
        let w = self.models.iter().map(|m| m.model_w).min().unwrap_or(CELL);
        let h = self.models.iter().map(|m| m.model_h).min().unwrap_or(CELL);
        (w, h)
    }
}

pub fn calibrate_score(s: f64, calib_min: f64, calib_max: f64) -> f64 {
    ((s - calib_min) / (calib_max - calib_min)).clamp(0.0, 1.0)
}

/// A window that passed the cascade, in level cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowHit {
    pub level: usize,
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// Per-node channel-stack offsets of a model on one level.
struct Compiled<'a> {
    model: &'a BoostedModel,
    offsets: Vec<[usize; 3]>,
}

impl<'a> Compiled<'a> {
    fn new(model: &'a BoostedModel, stack: &ChannelStack) -> Self {
        let mw = model.model_w / CELL;
        let mh = model.model_h / CELL;
        let plane = stack.width * stack.height;
        let off = |f: u32| {
            let f = f as usize;
            let c = f / (mw * mh);
            let r = f % (mw * mh);
            c * plane + (r / mw) * stack.width + r % mw
        };
        let offsets = model
            .trees
            .iter()
            .map(|t| [off(t.root.feature), off(t.children[0].feature), off(t.children[1].feature)])
            .collect();
        Compiled { model, offsets }
    }

    #[inline]
    fn score_at(&self, data: &[f32], base: usize) -> Option<f64> {
        let mut s = 0.0;
        for ((t, o), thr) in self
            .model
            .trees
            .iter()
            .zip(&self.offsets)
            .zip(&self.model.cascade_thresholds)
        {
            let r = usize::from(data[base + o[0]] >= t.root.threshold);
            let c = &t.children[r];
            let leaf = 2 * r + usize::from(data[base + o[1 + r]] >= c.threshold);
            s += t.leaf_values[leaf];
            if s < *thr {
                return None;
            }
        }
        Some(s)
    }
}

/// Windows of one level that survive the cascade, in (row, col) order.
pub fn slide_level(model: &BoostedModel, stack: &ChannelStack, level: usize, stride: usize) -> Vec<WindowHit> {
    let mw = model.model_w / CELL;
    let mh = model.model_h / CELL;
    if stack.width < mw || stack.height < mh {
        return Vec::new();
    }
    let stride = stride.max(1);
    let comp = Compiled::new(model, stack);
    let mut hits = Vec::new();
    for y in (0..=stack.height - mh).step_by(stride) {
        for x in (0..=stack.width - mw).step_by(stride) {
            if let Some(score) = comp.score_at(&stack.data, y * stack.width + x) {
                hits.push(WindowHit { level, x, y, score });
            }
        }
    }
    hits
}

pub fn slide_hits(model: &BoostedModel, pyramid: &ChannelPyramid, stride: usize) -> Vec<WindowHit> {
    let per_level: Vec<Vec<WindowHit>> = pyramid
        .levels
        .par_iter()
        .enumerate()
        .map(|(l, stack)| slide_level(model, stack, l, stride))
        .collect();
    per_level.into_iter().flatten().collect()
}

/// Object box of the window at cell `(x, y)` of `stack`, in image pixels.
pub fn window_object_box(dims: &ModelDims, stack: &ChannelStack, x: usize, y: usize) -> BBox2D {
    let (ox0, oy0, ox1, oy1) = dims.object_box();
    let px = (x as f64 - stack.pad_x as f64) * CELL as f64;
    let py = (y as f64 - stack.pad_y as f64) * CELL as f64;
    BBox2D {
        x1: (px + ox0) / stack.scale_x,
        y1: (py + oy0) / stack.scale_y,
        x2: (px + ox1) / stack.scale_x,
        y2: (py + oy1) / stack.scale_y,
    }
}

/// Object box of window `(level, x, y)` clipped to the image.
pub fn clipped_window_box(dims: &ModelDims, pyramid: &ChannelPyramid, level: usize, x: usize, y: usize) -> BBox2D {
    let b = window_object_box(dims, &pyramid.levels[level], x, y);
    b.clip(pyramid.image_width as f64, pyramid.image_height as f64).unwrap_or(b)
}

/// Object box of a window hit in image pixels, clipped to the image.
pub fn hit_box(model: &BoostedModel, pyramid: &ChannelPyramid, hit: &WindowHit) -> BBox2D {
    clipped_window_box(&model.dims(), pyramid, hit.level, hit.x, hit.y)
}

/// Every window above the cascade floor, as image-space detections with
/// raw scores, ordered by (level, row, col).
pub fn slide(model: &BoostedModel, model_id: usize, pyramid: &ChannelPyramid, stride: usize) -> Vec<Detection> {
    slide_hits(model, pyramid, stride)
        .iter()
        .map(|h| Detection {
            bbox: hit_box(model, pyramid, h),
            score: h.score,
            model_id,
            resolution_level: model.resolution_level,
        })
        .collect()
}

/// Greedy NMS: a suppressed box never suppresses others.
pub fn nms_greedy(dets: &[Detection], thr: f64, mode: OverlapMode) -> Vec<Detection> {
    let order = nms_order(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(dets[i].clone());
        for &j in &order[pos + 1..] {
            if !suppressed[j] && overlap(&dets[i].bbox, &dets[j].bbox, mode) > thr {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Score descending, then larger area, then input order.
fn nms_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[b].bbox.area().total_cmp(&dets[a].bbox.area()))
            .then(a.cmp(&b))
    });
    order
}

#[derive(Debug, Clone, Default)]
pub struct EnsembleOutput {
    /// Pooled detections after one NMS pass.
    pub detections: Vec<Detection>,
    /// Each model's own detections after per-model NMS.
    pub per_model: Vec<Vec<Detection>>,
}

pub fn detect_on_pyramid(pyramid: &ChannelPyramid, spec: &EnsembleSpec) -> EnsembleOutput {
    let raw: Vec<Vec<Detection>> = spec
        .models
        .par_iter()
        .enumerate()
        .map(|(id, m)| {
            let mut d = slide(m, id, pyramid, spec.stride);
            if spec.calibrate {
                for x in &mut d {
                    x.score = calibrate_score(x.score, m.calib_min, m.calib_max);
                }
            }
            d
        })
        .collect();
    let per_model: Vec<Vec<Detection>> = raw
        .par_iter()
        .map(|d| nms_greedy(d, spec.nms_overlap, spec.nms_mode))
        .collect();
    // pooled NMS over the per-model survivors, merged in model order
    let pooled: Vec<Detection> = per_model.iter().flatten().cloned().collect();
    EnsembleOutput {
        detections: nms_greedy(&pooled, spec.nms_overlap, spec.nms_mode),
        per_model,
    }
}

pub fn detect_ensemble(image: &Image, spec: &EnsembleSpec) -> Result<EnsembleOutput> {
    let pyramid = build_pyramid(image, &spec.pyramid)?;
    Ok(detect_on_pyramid(&pyramid, spec))
}

/// KITTI result line; `alpha` is -10 when orientation was not estimated.
pub fn kitti_result_line(class_name: &str, det: &Detection, alpha: Option<f64>) -> String {
    format!(
        "{class_name} -1 -1 {:.6} {:.2} {:.2} {:.2} {:.2} -1 -1 -1 -1000 -1000 -1000 -10 {:.6}",
        alpha.unwrap_or(-10.0),
        det.bbox.x1,
        det.bbox.y1,
        det.bbox.x2,
        det.bbox.y2,
        det.score
    )
}

pub fn write_kitti_results(class_name: &str, dets: &[Detection], alphas: Option<&[f64]>) -> String {
    let mut s = String::new();
    for (i, d) in dets.iter().enumerate() {
        let a = alphas.map(|a| a[i]);
        let _ = writeln!(s, "{}", kitti_result_line(class_name, d, a));
    }
    s
}

#[derive(Serialize)]
struct JsonDetection<'a> {
    image: &'a str,
    bbox: [f64; 4],
    score: f64,
    model_id: usize,
    resolution_level: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

pub fn detection_json_line(image: &str, det: &Detection, alpha: Option<f64>) -> Result<String> {
    Ok(serde_json::to_string(&JsonDetection {
        image,
        bbox: [det.bbox.x1, det.bbox.y1, det.bbox.x2, det.bbox.y2],
        score: det.score,
        model_id: det.model_id,
        resolution_level: det.resolution_level,
        alpha,
    })?)
}
