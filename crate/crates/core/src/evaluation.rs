//! KITTI-style scoring: difficulty filtering, greedy matching, PR/AP and
//! AOS curves, miss rate at a fixed FPPI, and the error taxonomy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{wrap_angle, Annotation3D, Occlusion};
use crate::bbox::{iou, BBox2D};
use crate::dataset::load_label_dir;
use crate::error::{Error, Result};

/// Fraction of a detection covered by a `DontCare` region above which the
/// detection is ignored.
pub const DONT_CARE_COVER: f64 = 0.5;
/// Lower overlap bound of a localization error.
pub const LOC_OVERLAP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub name: String,
    pub min_height: f64,
    pub max_occlusion: Occlusion,
    pub max_truncation: f64,
    pub overlap_thr: f64,
    /// Restricts evaluation to objects at least this occluded.
    #[serde(default)]
    pub min_occlusion: Option<Occlusion>,
}

impl EvalSettings {
    pub fn easy() -> Self {
        Self::preset("easy", 40.0, Occlusion::NotOccluded, 0.15)
    }

    pub fn moderate() -> Self {
        Self::preset("moderate", 25.0, Occlusion::Partial, 0.30)
    }

    pub fn hard() -> Self {
        Self::preset("hard", 25.0, Occlusion::Heavy, 0.50)
    }

    fn preset(name: &str, min_height: f64, max_occlusion: Occlusion, max_truncation: f64) -> Self {
        EvalSettings {
            name: name.to_string(),
            min_height,
            max_occlusion,
            max_truncation,
            overlap_thr: 0.7,
            min_occlusion: None,
        }
    }

    pub fn standard() -> Vec<Self> {
        vec![Self::easy(), Self::moderate(), Self::hard()]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_thr > 0.0 && self.overlap_thr < 1.0) {
            return Err(Error::Config(format!("overlap_thr {} outside (0, 1)", self.overlap_thr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GtStatus {
    Evaluated,
    DontCare,
}

pub fn difficulty_filter(gt: &Annotation3D, class_name: &str, s: &EvalSettings) -> GtStatus {
    let ok = gt.class_name == class_name
        && gt.bbox.height() >= s.min_height
        && gt.occlusion <= s.max_occlusion
        && gt.truncation <= s.max_truncation
        && s.min_occlusion.map_or(true, |m| gt.occlusion >= m);
    if ok {
        GtStatus::Evaluated
    } else {
        GtStatus::DontCare
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetFlag {
    TruePositive,
    FalsePositive,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GtFlag {
    Matched,
    Missed,
    DontCare,
}

/// A scored box with an optional observation angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalDetection {
    pub bbox: BBox2D,
    pub score: f64,
    pub alpha: Option<f64>,
}

impl EvalDetection {
    /// Result lines with the KITTI `-10` alpha placeholder carry no angle.
    pub fn from_annotation(a: &Annotation3D) -> Self {
        EvalDetection {
            bbox: a.bbox,
            score: a.score.unwrap_or(0.0),
            alpha: (a.alpha > -9.0).then_some(a.alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub scores: Vec<f64>,
    pub det_flags: Vec<DetFlag>,
    /// Angle error of each true positive; `None` elsewhere or without an
    /// estimated angle, which counts as a full miss for AOS.
    pub delta_theta: Vec<Option<f64>>,
    /// Index into the GT list matched by each true positive.
    pub det_gt: Vec<Option<usize>>,
    pub gt_flags: Vec<GtFlag>,
}

impl MatchReport {
    pub fn n_evaluated(&self) -> usize {
        self.gt_flags.iter().filter(|f| **f != GtFlag::DontCare).count()
    }
}

/// Greedy matching of detections (sorted by descending score) to the GT of
/// one image.
pub fn match_detections(
    dets: &[EvalDetection],
    gts: &[Annotation3D],
    class_name: &str,
    s: &EvalSettings,
) -> Result<MatchReport> {
    s.validate()?;
    if dets.windows(2).any(|w| w[0].score < w[1].score) {
        return Err(Error::invalid("detections must be sorted by descending score"));
    }
    let status: Vec<GtStatus> = gts.iter().map(|g| difficulty_filter(g, class_name, s)).collect();
    let mut gt_flags: Vec<GtFlag> = status
        .iter()
        .map(|st| match st {
            GtStatus::Evaluated => GtFlag::Missed,
            GtStatus::DontCare => GtFlag::DontCare,
        })
        .collect();
    let mut report = MatchReport {
        scores: dets.iter().map(|d| d.score).collect(),
        det_flags: Vec::with_capacity(dets.len()),
        delta_theta: Vec::with_capacity(dets.len()),
        det_gt: Vec::with_capacity(dets.len()),
        gt_flags: Vec::new(),
    };
    for d in dets {
        // too small to be judged under these settings
        if d.bbox.height() < s.min_height {
            report.det_flags.push(DetFlag::Ignored);
            report.delta_theta.push(None);
            report.det_gt.push(None);
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_flags[j] != GtFlag::Missed {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox);
            if o >= s.overlap_thr && best.map_or(true, |(bo, _)| o > bo) {
                best = Some((o, j));
            }
        }
        if let Some((_, j)) = best {
            gt_flags[j] = GtFlag::Matched;
            report.det_flags.push(DetFlag::TruePositive);
            report.delta_theta.push(d.alpha.map(|a| wrap_angle(a - gts[j].alpha)));
            report.det_gt.push(Some(j));
            continue;
        }
        let on_dont_care = gts.iter().zip(&status).any(|(g, st)| {
            *st == GtStatus::DontCare
                && if g.is_dont_care() {
                    d.bbox.intersection_area(&g.bbox) / d.bbox.area() > DONT_CARE_COVER
                } else {
                    iou(&d.bbox, &g.bbox) >= s.overlap_thr
                }
        });
        report
            .det_flags
            .push(if on_dont_care { DetFlag::Ignored } else { DetFlag::FalsePositive });
        report.delta_theta.push(None);
        report.det_gt.push(None);
    }
    // a too-small detection on an evaluated object neither confirms nor
    // misses it
    let mut spent = vec![false; dets.len()];
    for (j, g) in gts.iter().enumerate() {
        if gt_flags[j] != GtFlag::Missed {
            continue;
        }
        let hit = dets.iter().enumerate().position(|(i, d)| {
            !spent[i] && d.bbox.height() < s.min_height && iou(&d.bbox, &g.bbox) >= s.overlap_thr
        });
        if let Some(i) = hit {
            spent[i] = true;
            gt_flags[j] = GtFlag::DontCare;
        }
    }
    report.gt_flags = gt_flags;
    Ok(report)
}

/// Orientation similarity: mean of `(1 + cos dθ) / 2` over all
/// detections, with unassigned ones contributing 0.
pub fn orientation_similarity(assigned: &[(f64, bool)], n_detections: usize) -> Result<f64> {
    if n_detections == 0 {
        return Err(Error::invalid("orientation similarity of an empty detection set"));
    }
    let sum: f64 = assigned
        .iter()
        .filter(|(_, d)| *d)
        .map(|(t, _)| (1.0 + t.cos()) / 2.0)
        .sum();
    Ok(sum / n_detections as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Interpolation {
    #[default]
    Points41,
    Points11,
}

impl Interpolation {
    fn recall_points(self) -> Vec<f64> {
        let n = match self {
            Interpolation::Points41 => 40,
            Interpolation::Points11 => 10,
        };
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub precision: f64,
    pub recall: f64,
    pub similarity: f64,
    pub fppi: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<CurvePoint>,
    pub ap: f64,
    pub aos: f64,
    pub n_gt: usize,
    pub n_images: usize,
}

/// Interpolated area: mean over recall samples of the best value at any
/// recall at least as large.
pub fn interpolated_area(recall: &[f64], value: &[f64], interp: Interpolation) -> f64 {
    let pts = interp.recall_points();
    let total: f64 = pts
        .iter()
        .map(|&r| {
            recall
                .iter()
                .zip(value)
                .filter(|(rc, _)| **rc >= r - 1e-12)
                .map(|(_, v)| *v)
                .fold(0.0, f64::max)
        })
        .sum();
    total / pts.len() as f64
}

/// Sweeps every distinct score as a threshold, highest first.
pub fn pr_curve(reports: &[MatchReport], n_images: usize, interp: Interpolation) -> Result<PrCurve> {
    let n_gt: usize = reports.iter().map(|r| r.n_evaluated()).sum();
    if n_gt == 0 {
        return Err(Error::invalid("no evaluated ground truth"));
    }
    let mut scored: Vec<(f64, bool, f64)> = Vec::new();
    for r in reports {
        for i in 0..r.scores.len() {
            let sim = r.delta_theta[i].map_or(0.0, |t| (1.0 + t.cos()) / 2.0);
            match r.det_flags[i] {
                DetFlag::TruePositive => scored.push((r.scores[i], true, sim)),
                DetFlag::FalsePositive => scored.push((r.scores[i], false, 0.0)),
                DetFlag::Ignored => {}
            }
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp, mut sim) = (0usize, 0usize, 0.0f64);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            if scored[i].1 {
                tp += 1;
                sim += scored[i].2;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let n_det = (tp + fp) as f64;
        let recall = tp as f64 / n_gt as f64;
        points.push(CurvePoint {
            threshold: t,
            tp,
            fp,
            precision: tp as f64 / n_det,
            recall,
            similarity: sim / n_det,
            fppi: fp as f64 / n_images.max(1) as f64,
            miss_rate: 1.0 - recall,
        });
    }
    let rec: Vec<f64> = points.iter().map(|p| p.recall).collect();
    let prec: Vec<f64> = points.iter().map(|p| p.precision).collect();
    let simv: Vec<f64> = points.iter().map(|p| p.similarity).collect();
    Ok(PrCurve {
        ap: interpolated_area(&rec, &prec, interp),
        aos: interpolated_area(&rec, &simv, interp),
        points,
        n_gt,
        n_images,
    })
}

/// Miss rate at `fppi`, interpolated linearly in log-FPPI between the last
/// threshold within budget and the first beyond it.
pub fn miss_rate_at_fppi(curve: &PrCurve, fppi: f64) -> f64 {
    let mut below = (0.0, 1.0);
    for p in &curve.points {
        if p.fppi <= fppi {
            below = (p.fppi, p.miss_rate);
            continue;
        }
        let (f0, m0) = below;
        if f0 <= 0.0 {
            return m0;
        }
        let t = (fppi.ln() - f0.ln()) / (p.fppi.ln() - f0.ln());
        return m0 + t * (p.miss_rate - m0);
    }
    below.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    Loc,
    Occ,
    Trunc,
    TruncOcc,
    Other,
}

pub const ERROR_KINDS: [ErrorKind; 5] = [
    ErrorKind::Loc,
    ErrorKind::Occ,
    ErrorKind::Trunc,
    ErrorKind::TruncOcc,
    ErrorKind::Other,
];

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Loc => "loc",
            ErrorKind::Occ => "occ",
            ErrorKind::Trunc => "trunc",
            ErrorKind::TruncOcc => "trunc+occ",
            ErrorKind::Other => "other",
        }
    }

    fn from_flags(occluded: bool, truncated: bool) -> Option<Self> {
        match (occluded, truncated) {
            (true, true) => Some(ErrorKind::TruncOcc),
            (true, false) => Some(ErrorKind::Occ),
            (false, true) => Some(ErrorKind::Trunc),
            (false, false) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    /// One entry per detection; `None` unless it is a false positive.
    pub false_positives: Vec<Option<ErrorKind>>,
    /// One entry per GT; `None` unless it was missed.
    pub misses: Vec<Option<ErrorKind>>,
}

/// False positives are `loc` when they overlap a class instance by at least
/// 0.1, `other` otherwise. Duplicates on an already matched object count as
/// `loc`. Misses are labeled by their occlusion and
/// truncation flags; unflagged misses are `loc` when some detection
/// overlaps them by 0.1, `other` otherwise.
pub fn fp_taxonomy(
    report: &MatchReport,
    dets: &[EvalDetection],
    gts: &[Annotation3D],
    class_name: &str,
) -> Taxonomy {
    let class: Vec<&Annotation3D> = gts.iter().filter(|g| g.class_name == class_name).collect();
    let false_positives = report
        .det_flags
        .iter()
        .zip(dets)
        .map(|(f, d)| {
            (*f == DetFlag::FalsePositive).then(|| {
                let best = class.iter().map(|g| iou(&d.bbox, &g.bbox)).fold(0.0, f64::max);
                if best >= LOC_OVERLAP {
                    ErrorKind::Loc
                } else {
                    ErrorKind::Other
                }
            })
        })
        .collect();
    let misses = report
        .gt_flags
        .iter()
        .zip(gts)
        .map(|(f, g)| {
            (*f == GtFlag::Missed).then(|| {
                ErrorKind::from_flags(g.occlusion >= Occlusion::Partial, g.truncation > 0.0).unwrap_or_else(|| {
                    let near = dets.iter().any(|d| iou(&d.bbox, &g.bbox) >= LOC_OVERLAP);
                    if near {
                        ErrorKind::Loc
                    } else {
                        ErrorKind::Other
                    }
                })
            })
        })
        .collect();
    Taxonomy { false_positives, misses }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyCounts {
    pub false_positives: BTreeMap<String, usize>,
    pub misses: BTreeMap<String, usize>,
}

impl TaxonomyCounts {
    fn add(&mut self, t: &Taxonomy) {
        for k in t.false_positives.iter().flatten() {
            *self.false_positives.entry(k.name().to_string()).or_default() += 1;
        }
        for k in t.misses.iter().flatten() {
            *self.misses.entry(k.name().to_string()).or_default() += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyResult {
    pub settings: EvalSettings,
    pub ap: f64,
    pub aos: f64,
    pub miss_rate_at_0_1_fppi: f64,
    pub n_gt: usize,
    pub n_detections: usize,
    pub taxonomy: TaxonomyCounts,
    #[serde(skip)]
    pub curve: Option<PrCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub class_name: String,
    pub n_images: usize,
    pub interpolation: Interpolation,
    pub results: Vec<DifficultyResult>,
}

/// Scores one class over a set of frames. Frames are keyed by id; missing
/// detection entries mean no detections.
pub fn evaluate(
    gts: &BTreeMap<String, Vec<Annotation3D>>,
    dets: &BTreeMap<String, Vec<EvalDetection>>,
    class_name: &str,
    settings: &[EvalSettings],
    interp: Interpolation,
) -> Result<EvalSummary> {
    let frames: Vec<(&String, &Vec<Annotation3D>)> = gts.iter().collect();
    let empty = Vec::new();
    let sorted: Vec<Vec<EvalDetection>> = frames
        .iter()
        .map(|(id, _)| {
            let mut v = dets.get(*id).unwrap_or(&empty).clone();
            v.sort_by(|a, b| b.score.total_cmp(&a.score));
            v
        })
        .collect();
    let mut results = Vec::new();
    for s in settings {
        let per: Vec<(MatchReport, Taxonomy)> = frames
            .par_iter()
            .zip(&sorted)
            .map(|((_, g), d)| {
                let r = match_detections(d, g, class_name, s)?;
                let t = fp_taxonomy(&r, d, g, class_name);
                Ok((r, t))
            })
            .collect::<Result<_>>()?;
        let reports: Vec<MatchReport> = per.iter().map(|(r, _)| r.clone()).collect();
        let mut taxonomy = TaxonomyCounts::default();
        for (_, t) in &per {
            taxonomy.add(t);
        }
        let n_gt: usize = reports.iter().map(|r| r.n_evaluated()).sum();
        let n_detections = sorted.iter().map(|d| d.len()).sum();
        let (ap, aos, mr, curve) = if n_gt == 0 {
            log::warn!("{}: no evaluated ground truth", s.name);
            (0.0, 0.0, 1.0, None)
        } else {
            let c = pr_curve(&reports, frames.len(), interp)?;
            (c.ap, c.aos, miss_rate_at_fppi(&c, 0.1), Some(c))
        };
        results.push(DifficultyResult {
            settings: s.clone(),
            ap,
            aos,
            miss_rate_at_0_1_fppi: mr,
            n_gt,
            n_detections,
            taxonomy,
            curve,
        });
    }
    Ok(EvalSummary {
        class_name: class_name.to_string(),
        n_images: frames.len(),
        interpolation: interp,
        results,
    })
}

/// Reads a GT label directory and a result directory in KITTI format.
pub fn evaluate_dirs(
    gt_dir: &Path,
    det_dir: &Path,
    class_name: &str,
    settings: &[EvalSettings],
    interp: Interpolation,
) -> Result<EvalSummary> {
    let gts = load_label_dir(gt_dir)?;
    if gts.is_empty() {
        return Err(Error::Config(format!("no label files in {}", gt_dir.display())));
    }
    let dets = load_label_dir(det_dir)?
        .into_iter()
        .map(|(k, v)| {
            let d = v
                .iter()
                .filter(|a| a.class_name == class_name)
                .map(EvalDetection::from_annotation)
                .collect();
            (k, d)
        })
        .collect();
    evaluate(&gts, &dets, class_name, settings, interp)
}

pub fn curve_csv(curve: &PrCurve) -> String {
    let mut s = String::from("threshold,precision,recall,similarity,fppi,miss_rate\n");
    for p in &curve.points {
        let _ = writeln!(
            s,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.threshold, p.precision, p.recall, p.similarity, p.fppi, p.miss_rate
        );
    }
    s
}

pub fn taxonomy_csv(summary: &EvalSummary) -> String {
    let mut s = String::from("difficulty,kind,false_positives,misses\n");
    for r in &summary.results {
        for k in ERROR_KINDS {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.settings.name,
                k.name(),
                r.taxonomy.false_positives.get(k.name()).copied().unwrap_or(0),
                r.taxonomy.misses.get(k.name()).copied().unwrap_or(0)
            );
        }
    }
    s
}

const PLOT_W: f64 = 360.0;
const PLOT_H: f64 = 280.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn svg_frame(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        PLOT_W + 2.0 * MARGIN,
        PLOT_H + 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, MARGIN + PLOT_W / 2.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
        MARGIN + PLOT_W / 2.0,
        PLOT_H + MARGIN + 30.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{ylabel}</text>"#,
        MARGIN + PLOT_H / 2.0,
        MARGIN + PLOT_H / 2.0
    );
    s
}

/// Line plot of `(x, y)` series on unit axes; `log_x` maps x through
/// log10 over `[1e-2, 1e1]`.
pub fn svg_line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)], log_x: bool) -> String {
    let mut s = svg_frame(title, xlabel, ylabel);
    let fx = |x: f64| {
        let u = if log_x {
            ((x.max(1e-2).log10() + 2.0) / 3.0).clamp(0.0, 1.0)
        } else {
            x.clamp(0.0, 1.0)
        };
        MARGIN + u * PLOT_W
    };
    let fy = |y: f64| MARGIN + (1.0 - y.clamp(0.0, 1.0)) * PLOT_H;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", fx(*x), fy(*y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            MARGIN + 8.0,
            MARGIN + 14.0 + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Stacked bars of taxonomy fractions, one bar per difficulty and kind of
/// error (false positives, misses).
pub fn svg_taxonomy(summary: &EvalSummary) -> String {
    let mut s = svg_frame("error breakdown", "difficulty", "fraction");
    let bars: Vec<(String, &BTreeMap<String, usize>)> = summary
        .results
        .iter()
        .flat_map(|r| {
            [
                (format!("{} fp", r.settings.name), &r.taxonomy.false_positives),
                (format!("{} miss", r.settings.name), &r.taxonomy.misses),
            ]
        })
        .collect();
    let bw = PLOT_W / bars.len().max(1) as f64;
    for (i, (label, counts)) in bars.iter().enumerate() {
        let total: usize = counts.values().sum();
        let mut y = MARGIN + PLOT_H;
        for (k, kind) in ERROR_KINDS.iter().enumerate() {
            let c = counts.get(kind.name()).copied().unwrap_or(0);
            if total == 0 || c == 0 {
                continue;
            }
            let h = PLOT_H * c as f64 / total as f64;
            y -= h;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                MARGIN + i as f64 * bw + 4.0,
                y,
                bw - 8.0,
                h,
                COLORS[k]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="9">{label}</text>"#,
            MARGIN + (i as f64 + 0.5) * bw,
            MARGIN + PLOT_H + 12.0
        );
    }
    for (k, kind) in ERROR_KINDS.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            MARGIN + PLOT_W + 4.0,
            MARGIN + 12.0 + 14.0 * k as f64,
            COLORS[k],
            kind.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `summary.json`, per-difficulty curve CSVs, the taxonomy CSV and
/// the SVG plots into `dir`.
pub fn write_outputs(summary: &EvalSummary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    put("summary.json", serde_json::to_string_pretty(summary)? + "\n")?;
    put("taxonomy.csv", taxonomy_csv(summary))?;
    let mut pr = Vec::new();
    let mut aos = Vec::new();
    let mut roc = Vec::new();
    for r in &summary.results {
        if let Some(c) = &r.curve {
            put(&format!("curve_{}.csv", r.settings.name), curve_csv(c))?;
            pr.push((r.settings.name.clone(), c.points.iter().map(|p| (p.recall, p.precision)).collect()));
            aos.push((r.settings.name.clone(), c.points.iter().map(|p| (p.recall, p.similarity)).collect()));
            roc.push((r.settings.name.clone(), c.points.iter().map(|p| (p.fppi, p.recall)).collect()));
        }
    }
    put("pr.svg", svg_line_plot("precision / recall", "recall", "precision", &pr, false))?;
    put("aos.svg", svg_line_plot("orientation similarity", "recall", "s(r)", &aos, false))?;
    put("roc_fppi.svg", svg_line_plot("recall vs FPPI", "false positives per image (log)", "recall", &roc, true))?;
    put("taxonomy.svg", svg_taxonomy(summary))
}
