//! Brute-force reference implementations shared by the property suites and
//! the acceptance harness. Each one is written from the definition, not by
//! reusing library code.

#![allow(dead_code)]

use subcat::annotations::{Annotation3D, Occlusion};
use subcat::bbox::{BBox2D, OverlapMode};
use subcat::detector::Detection;

/// Pixels covered by an integer box `[x1, x2) x [y1, y2)`.
pub fn pixels(b: &BBox2D) -> Vec<(i64, i64)> {
    let mut v = Vec::new();
    for y in b.y1 as i64..b.y2 as i64 {
        for x in b.x1 as i64..b.x2 as i64 {
            v.push((x, y));
        }
    }
    v
}

fn counts(a: &BBox2D, b: &BBox2D) -> (f64, f64, f64) {
    let pa = pixels(a);
    let inter = pa
        .iter()
        .filter(|(x, y)| (*x as f64) >= b.x1 && (*x as f64) < b.x2 && (*y as f64) >= b.y1 && (*y as f64) < b.y2)
        .count();
    (pa.len() as f64, pixels(b).len() as f64, inter as f64)
}

pub fn pixel_overlap(a: &BBox2D, b: &BBox2D, mode: OverlapMode) -> f64 {
    let (na, nb, i) = counts(a, b);
    match mode {
        OverlapMode::IoU => i / (na + nb - i),
        OverlapMode::IoMin => i / na.min(nb),
    }
}

/// Covered fraction of `occludee`.
pub fn pixel_occlusion(occludee: &BBox2D, occluder: &BBox2D) -> f64 {
    let (na, _, i) = counts(occludee, occluder);
    i / na
}

pub fn similarity_oracle(pairs: &[(f64, bool)], n: usize) -> f64 {
    let mut s = 0.0;
    for (t, d) in pairs {
        if *d {
            s += 0.5 * (1.0 + t.cos());
        }
    }
    s / n as f64
}

/// Precision/recall/fppi at every cutoff "score >= c", counted directly.
pub struct Table {
    pub rows: Vec<(f64, f64, f64)>,
}

pub fn pr_table(dets: &[(f64, bool)], n_gt: usize, n_images: usize) -> Table {
    let mut cuts: Vec<f64> = dets.iter().map(|d| d.0).collect();
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cuts.dedup();
    let rows = cuts
        .iter()
        .map(|&c| {
            let tp = dets.iter().filter(|d| d.0 >= c && d.1).count() as f64;
            let fp = dets.iter().filter(|d| d.0 >= c && !d.1).count() as f64;
            (tp / (tp + fp), tp / n_gt as f64, fp / n_images as f64)
        })
        .collect();
    Table { rows }
}

/// Interpolated average precision over `n_points` evenly spaced recalls.
pub fn ap_oracle(dets: &[(f64, bool)], n_gt: usize, n_points: usize) -> f64 {
    let t = pr_table(dets, n_gt, 1);
    let mut sum = 0.0;
    for k in 0..n_points {
        let r = k as f64 / (n_points - 1) as f64;
        let mut best = 0.0f64;
        for (p, rec, _) in &t.rows {
            if *rec >= r - 1e-12 {
                best = best.max(*p);
            }
        }
        sum += best;
    }
    sum / n_points as f64
}

/// Miss rate at the tightest cutoff within the FPPI budget, log-linearly
/// interpolated toward the next looser cutoff.
pub fn miss_rate_oracle(dets: &[(f64, bool)], n_gt: usize, n_images: usize, fppi: f64) -> f64 {
    let t = pr_table(dets, n_gt, n_images);
    let within: Vec<usize> = (0..t.rows.len()).filter(|&i| t.rows[i].2 <= fppi).collect();
    let last = match within.last() {
        Some(&i) => i,
        None => {
            return 1.0;
        }
    };
    let (f0, m0) = (t.rows[last].2, 1.0 - t.rows[last].1);
    if last + 1 == t.rows.len() || f0 == 0.0 {
        return m0;
    }
    let (f1, m1) = (t.rows[last + 1].2, 1.0 - t.rows[last + 1].1);
    m0 + (m1 - m0) * (fppi / f0).ln() / (f1 / f0).ln()
}

/// The suppression rule stated as a fixed point: a detection survives iff
/// no earlier survivor overlaps it by more than `thr`.
pub fn nms_reference(dets: &[Detection], thr: f64, mode: OverlapMode) -> Vec<Detection> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .partial_cmp(&da.score)
            .unwrap()
            .then(db.bbox.area().partial_cmp(&da.bbox.area()).unwrap())
            .then(a.cmp(&b))
    });
    let mut out: Vec<Detection> = Vec::new();
    for i in idx {
        if out.iter().all(|k| pixel_free_overlap(&k.bbox, &dets[i].bbox, mode) <= thr) {
            out.push(dets[i].clone());
        }
    }
    out
}

/// Overlap from coordinates, for boxes that are not pixel aligned.
pub fn pixel_free_overlap(a: &BBox2D, b: &BBox2D, mode: OverlapMode) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let i = iw * ih;
    let (aa, ab) = ((a.x2 - a.x1) * (a.y2 - a.y1), (b.x2 - b.x1) * (b.y2 - b.y1));
    match mode {
        OverlapMode::IoU => i / (aa + ab - i),
        OverlapMode::IoMin => i / aa.min(ab),
    }
}

pub fn car(bbox: BBox2D, alpha: f64) -> Annotation3D {
    Annotation3D {
        class_name: "Car".into(),
        truncation: 0.0,
        occlusion: Occlusion::NotOccluded,
        alpha,
        bbox,
        dims_hwl: [1.5, 1.6, 3.9],
        location: [0.0, 1.65, 10.0],
        rotation_y: alpha,
        score: None,
    }
}

pub fn det(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> Detection {
    Detection {
        bbox: BBox2D::new(x1, y1, x2, y2).unwrap(),
        score,
        model_id: 0,
        resolution_level: 0,
    }
}
