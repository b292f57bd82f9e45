//! The batch pipeline behind the command line: run configuration and the
//! cluster, train, detect, orient and evaluate stages. Each stage reads the
//! previous stage's files from the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{geometric_features, Annotation3D, GeoFeatures};
use crate::bbox::{iou, BBox2D, OverlapMode};
use crate::boosting::{train_subcategory, Manifest, ModelBundle, PositiveSample, StageLog, TrainConfig, MODEL_VERSION};
use crate::channels::{build_pyramid, ChannelStack, PyramidConfig, CELL};
use crate::clustering::{
    dsc, fuse_affinities, gaussian_affinity, kmeans, median_pairwise_distance, model_dims_for_cluster,
    spectral_cluster, spectral_from_affinity, standardize, strategy1_bins, write_cluster_report,
    write_cluster_summary, ClusterModel, DscConfig, FeatureMatrix, FeatureSource, SpectralConfig, Strategy,
};
use crate::dataset::{list_images, load_label_dir, load_split, Frame, TrainingSet};
use crate::detector::{
    detect_on_pyramid, detection_json_line, hybrid_levels, resolution_width, write_kitti_results, Detection,
    EnsembleOutput, EnsembleSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_dirs, write_outputs, EvalSettings, EvalSummary, Interpolation};
use crate::image::Image;
use crate::linear_models::SvmParams;
use crate::orientation::{score_vector, train_orientation, OrientationKind, OrientationModel};
use crate::synth::{write_split, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub strategy: Strategy,
    /// Orientation bins for binning.
    pub b: usize,
    /// Occlusion bins for binning.
    pub m: usize,
    /// Two occlusion bins at a fixed edge instead of `m` uniform ones.
    pub split: bool,
    /// Cluster count for k-means, spectral and DSC.
    pub k: usize,
    pub features: FeatureSource,
    /// Gaussian bandwidth; the median pairwise distance when absent.
    pub sigma: Option<f64>,
    /// Weight of the geometric affinity when fusing.
    pub weight_geo: f64,
    pub kmeans_iters: usize,
    pub dsc: DscConfig,
    /// Visual features are computed on crops of at most this width.
    pub max_visual_width: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            strategy: Strategy::Strategy1,
            b: 8,
            m: 1,
            split: false,
            k: 20,
            features: FeatureSource::Geometric,
            sigma: None,
            weight_geo: 0.5,
            kmeans_iters: 100,
            dsc: DscConfig::default(),
            max_visual_width: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub nms_overlap: f64,
    pub nms_mode: OverlapMode,
    /// `None` calibrates when more than one resolution is trained.
    pub calibrate: Option<bool>,
    pub stride: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            nms_overlap: 0.3,
            nms_mode: OverlapMode::IoU,
            calibrate: None,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrientConfig {
    pub kind: OrientationKind,
    pub bins: usize,
    pub svm: SvmParams,
    /// Training detections must overlap their object by this much.
    pub min_overlap: f64,
    /// Training images used to collect samples; 0 uses all.
    pub max_images: usize,
}

impl Default for OrientConfig {
    fn default() -> Self {
        OrientConfig {
            kind: OrientationKind::MulticlassSvm,
            bins: 25,
            svm: SvmParams::default(),
            min_overlap: 0.7,
            max_images: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub settings: Vec<EvalSettings>,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            settings: EvalSettings::standard(),
            interpolation: Interpolation::Points41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// KITTI-layout training split (`image_2/`, `label_2/`).
    pub train_dir: PathBuf,
    /// Split to detect on and evaluate.
    pub test_dir: PathBuf,
    pub class_name: String,
    pub cluster: ClusterConfig,
    /// Hybrid resolution count: 1, 3 or 5.
    pub resolutions: usize,
    pub base_width: usize,
    /// Training positives must be at least this tall.
    pub min_train_height: f64,
    pub max_train_truncation: f64,
    pub train: TrainConfig,
    pub pyramid: PyramidConfig,
    pub detect: DetectConfig,
    pub orientation: OrientConfig,
    pub eval: EvalConfig,
    /// Scene generation for the `synth` command.
    pub synth_train: SynthSpec,
    pub synth_test: SynthSpec,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_dir: "data/train".into(),
            test_dir: "data/test".into(),
            class_name: "Car".into(),
            cluster: ClusterConfig::default(),
            resolutions: 3,
            base_width: 32,
            min_train_height: 25.0,
            max_train_truncation: 0.5,
            train: TrainConfig::default(),
            pyramid: PyramidConfig::default(),
            detect: DetectConfig::default(),
            orientation: OrientConfig::default(),
            eval: EvalConfig::default(),
            synth_train: SynthSpec {
                n_images: 300,
                seed: 1,
                ..SynthSpec::default()
            },
            synth_test: SynthSpec {
                n_images: 100,
                seed: 2,
                ..SynthSpec::default()
            },
            seed: 0,
            out_dir: "out".into(),
        }
    }
}

/// Sets `key` (dotted path) in a JSON object. The value is parsed as JSON
/// and kept as a string when that fails.
pub fn set_path(root: &mut serde_json::Value, key: &str, value: &str) -> Result<()> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("cannot set {key}: {p} is not inside an object")))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*p) {
                return Err(Error::Config(format!("unknown setting {key}")));
            }
            obj.insert(p.to_string(), parsed);
            return Ok(());
        }
        cur = obj
            .get_mut(*p)
            .ok_or_else(|| Error::Config(format!("unknown setting {key}")))?;
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `key=value` overrides.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for s in sets {
            let (k, val) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
            set_path(&mut v, k.trim(), val.trim())?;
        }
        serde_json::from_value(v).map_err(|e| Error::Config(format!("override: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        for s in &self.eval.settings {
            s.validate()?;
        }
        if ![1, 3, 5].contains(&self.resolutions) {
            return Err(Error::Config(format!("resolutions must be 1, 3 or 5, got {}", self.resolutions)));
        }
        if self.base_width == 0 || self.base_width % CELL != 0 {
            return Err(Error::Config(format!("base_width {} is not a multiple of {CELL}", self.base_width)));
        }
        Ok(())
    }

    pub fn clusters_dir(&self) -> PathBuf {
        self.out_dir.join("clusters")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn detections_dir(&self) -> PathBuf {
        self.out_dir.join("detections")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.out_dir.join("results")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    fn calibrate(&self) -> bool {
        self.detect.calibrate.unwrap_or(self.resolutions > 1)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// A training positive: annotation `ann` of frame `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub frame: usize,
    pub ann: usize,
}

/// Class instances usable as training positives, in frame then label order.
pub fn training_samples(labels: &[Vec<Annotation3D>], cfg: &RunConfig) -> Vec<SampleRef> {
    let mut out = Vec::new();
    for (f, anns) in labels.iter().enumerate() {
        for (a, g) in anns.iter().enumerate() {
            if g.class_name == cfg.class_name
                && g.bbox.height() >= cfg.min_train_height
                && g.truncation <= cfg.max_train_truncation
            {
                out.push(SampleRef { frame: f, ann: a });
            }
        }
    }
    out
}

/// Common crop size for visual features: the mean box size, shrunk to at
/// most `max_width` and rounded to whole cells.
pub fn visual_crop_size(labels: &[Vec<Annotation3D>], samples: &[SampleRef], max_width: usize) -> (usize, usize) {
    let n = samples.len().max(1) as f64;
    let (mut mw, mut mh) = (0.0, 0.0);
    for s in samples {
        let b = &labels[s.frame][s.ann].bbox;
        mw += b.width() / n;
        mh += b.height() / n;
    }
    let k = (max_width as f64 / mw).min(1.0);
    let cells = |v: f64| ((v / CELL as f64).round() as usize).max(1) * CELL;
    (cells(mw * k), cells(mh * k))
}

/// Channel features of each sample's box resized to `size`.
pub fn visual_features(images: &[Image], labels: &[Vec<Annotation3D>], samples: &[SampleRef], size: (usize, usize)) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            let b = &labels[s.frame][s.ann].bbox;
            let crop = images[s.frame].crop_resize(b.x1, b.y1, b.width(), b.height(), size.0, size.1);
            ChannelStack::from_image(&crop).data.iter().map(|&v| v as f64).collect()
        })
        .collect();
    FeatureMatrix::new(rows, FeatureSource::Visual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub frame_ids: Vec<String>,
    pub samples: Vec<SampleRef>,
    pub model: ClusterModel,
    /// The cluster settings that produced `model`.
    pub config: ClusterConfig,
}

fn need_images(c: &ClusterConfig) -> bool {
    c.strategy == Strategy::Dsc || c.features != FeatureSource::Geometric && c.strategy != Strategy::Strategy1
}

/// Random windows away from every class instance, for DSC negatives.
fn dsc_negatives(images: &[Image], labels: &[Vec<Annotation3D>], class_name: &str, w: usize, h: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < n && tries < 50 * n {
        tries += 1;
        let i = rng.gen_range(0..images.len());
        let im = &images[i];
        let bw = rng.gen_range(w as f64..(w as f64 * 3.0)).min(im.width as f64);
        let bh = bw * h as f64 / w as f64;
        if bh > im.height as f64 {
            continue;
        }
        let x = rng.gen_range(0.0..=(im.width as f64 - bw));
        let y = rng.gen_range(0.0..=(im.height as f64 - bh));
        let b = BBox2D::from_xywh(x, y, bw, bh).expect("positive size");
        if labels[i].iter().any(|g| g.class_name == class_name && iou(&g.bbox, &b) > 0.1) {
            continue;
        }
        let crop = im.crop_resize(x, y, bw, bh, w, h);
        out.push(ChannelStack::from_image(&crop).data.iter().map(|&v| v as f64).collect());
    }
    out
}

/// Groups training positives into subcategories.
pub fn cluster_samples(
    images: Option<&[Image]>,
    labels: &[Vec<Annotation3D>],
    samples: &[SampleRef],
    cfg: &RunConfig,
) -> Result<ClusterModel> {
    let c = &cfg.cluster;
    if samples.is_empty() {
        return Err(Error::invalid(format!("no {} instances to cluster", cfg.class_name)));
    }
    let geo: Vec<GeoFeatures> = samples
        .iter()
        .map(|s| geometric_features(s.ann, &labels[s.frame]))
        .collect::<Result<_>>()?;
    let geo_matrix = || -> Result<FeatureMatrix> {
        let m = FeatureMatrix::new(geo.iter().map(|g| g.to_vec()).collect(), FeatureSource::Geometric)?;
        Ok(standardize(&m).0)
    };
    let size = visual_crop_size(labels, samples, c.max_visual_width);
    let visual = || -> Result<FeatureMatrix> {
        let ims = images.ok_or_else(|| Error::invalid("visual clustering needs images"))?;
        Ok(standardize(&visual_features(ims, labels, samples, size)?).0)
    };
    let k = c.k.min(samples.len());
    let mut model = match (c.strategy, c.features) {
        (Strategy::Strategy1, _) => strategy1_bins(&geo, c.b, c.m, c.split)?,
        (Strategy::KMeans, FeatureSource::Visual) => kmeans(&visual()?, k, cfg.seed, c.kmeans_iters)?,
        (Strategy::KMeans, _) => kmeans(&geo_matrix()?, k, cfg.seed, c.kmeans_iters)?,
        (Strategy::Spectral, FeatureSource::FusedAffinity) => {
            let g = geo_matrix()?;
            let v = visual()?;
            let sg = c.sigma.unwrap_or_else(|| median_pairwise_distance(&g.rows).max(1e-9));
            let sv = c.sigma.unwrap_or_else(|| median_pairwise_distance(&v.rows).max(1e-9));
            let w = fuse_affinities(&gaussian_affinity(&g.rows, sg), &gaussian_affinity(&v.rows, sv), c.weight_geo)?;
            let mut m = spectral_from_affinity(&w, g.n(), k, cfg.seed)?;
            m.strategy = Strategy::Spectral;
            m
        }
        (Strategy::Spectral, src) => {
            let x = if src == FeatureSource::Visual { visual()? } else { geo_matrix()? };
            let sc = match c.sigma {
                Some(s) => SpectralConfig::new(s, k)?,
                None => SpectralConfig::median_heuristic(&x, k)?,
            };
            spectral_cluster(&x, &sc, cfg.seed)?
        }
        (Strategy::Dsc, _) => {
            let ims = images.ok_or_else(|| Error::invalid("DSC needs images"))?;
            let xpos = visual_features(ims, labels, samples, size)?;
            let neg = dsc_negatives(ims, labels, &cfg.class_name, size.0, size.1, samples.len().max(200), cfg.seed);
            let xneg = FeatureMatrix::new(neg, FeatureSource::Visual)?;
            let init = kmeans(&xpos, k, cfg.seed, c.kmeans_iters)?;
            dsc(&xpos, &xneg, k, &init, &c.dsc)?
        }
    };
    let dropped = model.k - model.sizes().iter().filter(|&&s| s > 0).count();
    if dropped > 0 {
        log::info!("dropping {dropped} empty clusters");
        model.compact();
    }
    Ok(model)
}

/// `cluster` stage: writes `clusters/{clusters.json,assignments.csv,summary.csv}`.
pub fn run_cluster(cfg: &RunConfig) -> Result<ClusterOutput> {
    cfg.validate()?;
    let frames = load_split(&cfg.train_dir, true)?;
    let labels: Vec<Vec<Annotation3D>> = frames.iter().map(|f| f.labels.clone()).collect();
    let samples = training_samples(&labels, cfg);
    let images = if need_images(&cfg.cluster) {
        Some(
            frames
                .par_iter()
                .map(|f| Image::load(&f.image_path))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let model = cluster_samples(images.as_deref(), &labels, &samples, cfg)?;
    let out = ClusterOutput {
        frame_ids: frames.iter().map(|f| f.id.clone()).collect(),
        samples,
        model,
        config: cfg.cluster.clone(),
    };
    let geo: Vec<GeoFeatures> = out
        .samples
        .iter()
        .map(|s| geometric_features(s.ann, &labels[s.frame]))
        .collect::<Result<_>>()?;
    let dir = cfg.clusters_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("clusters.json"), &(serde_json::to_string(&out)? + "\n"))?;
    write_cluster_report(&dir.join("assignments.csv"), &out.model, &geo)?;
    write_cluster_summary(&dir.join("summary.csv"), &out.model, &geo)?;
    Ok(out)
}

pub fn load_clusters(cfg: &RunConfig) -> Result<ClusterOutput> {
    let p = cfg.clusters_dir().join("clusters.json");
    Ok(serde_json::from_str(&read_file(&p)?)?)
}

/// Positives of one subcategory at one resolution. Higher resolutions keep
/// instances at least 0.8 times as wide as the template's object region,
/// falling back to the whole cluster when fewer than 8 remain.
pub fn level_positives(samples: &[PositiveSample], object_width: f64, level: usize) -> Vec<PositiveSample> {
    if level == 0 {
        return samples.to_vec();
    }
    let big: Vec<PositiveSample> = samples
        .iter()
        .copied()
        .filter(|s| s.bbox.width() >= 0.8 * object_width)
        .collect();
    if big.len() < 8 {
        samples.to_vec()
    } else {
        big
    }
}

/// Trains every subcategory at every resolution level. Model ids are
/// subcategory-major.
pub fn train_bundle(set: &TrainingSet, clusters: &ClusterOutput, cfg: &RunConfig) -> Result<(ModelBundle, Vec<StageLog>)> {
    let levels = hybrid_levels(cfg.resolutions)?;
    let k = clusters.model.k;
    let mut per_cluster: Vec<Vec<PositiveSample>> = vec![Vec::new(); k];
    for (s, &c) in clusters.samples.iter().zip(&clusters.model.assignments) {
        per_cluster[c].push(PositiveSample {
            image: s.frame,
            bbox: set.labels[s.frame][s.ann].bbox,
        });
    }
    let tcfg = cfg.train_config();
    let jobs: Vec<(usize, usize)> = (0..k).flat_map(|c| levels.iter().map(move |&l| (c, l))).collect();
    let trained: Vec<(crate::boosting::BoostedModel, Vec<StageLog>)> = jobs
        .par_iter()
        .map(|&(c, level)| {
            let boxes: Vec<BBox2D> = per_cluster[c].iter().map(|s| s.bbox).collect();
            let dims = model_dims_for_cluster(&boxes, resolution_width(cfg.base_width, level))?;
            let pos = level_positives(&per_cluster[c], (dims.model_w - dims.pad_w) as f64, level);
            log::info!(
                "training subcategory {c} level {level}: {}x{} template, {} positives",
                dims.model_w,
                dims.model_h,
                pos.len()
            );
            train_subcategory(&pos, set, dims, c, level, &tcfg)
                .map_err(|e| Error::invalid(format!("subcategory {c} level {level}: {e}")))
        })
        .collect::<Result<_>>()?;
    let mut models = Vec::new();
    let mut logs = Vec::new();
    let mut entries = Vec::new();
    for (id, (m, l)) in trained.into_iter().enumerate() {
        entries.push(ModelBundle::entry_for(&m, id));
        models.push(m);
        logs.extend(l);
    }
    let manifest = Manifest {
        version: MODEL_VERSION,
        class_name: cfg.class_name.clone(),
        base_width: cfg.base_width,
        cluster_spec: serde_json::to_value(&clusters.config)?,
        n_subcategories: k,
        resolution_levels: levels,
        pyramid: cfg.pyramid.clone(),
        models: entries,
    };
    Ok((ModelBundle { manifest, models }, logs))
}

/// Loads a split with cached pyramids sized for `min_window`.
pub fn load_training_set(dir: &Path, cfg: &RunConfig, min_window: (usize, usize)) -> Result<TrainingSet> {
    let frames = load_split(dir, true)?;
    let pyr = PyramidConfig {
        min_window,
        ..cfg.pyramid.clone()
    };
    TrainingSet::from_frames(&frames, &cfg.class_name, &pyr)
}

fn smallest_window(clusters: &ClusterOutput, labels: &[Vec<Annotation3D>], cfg: &RunConfig) -> Result<(usize, usize)> {
    let mut best = (usize::MAX, usize::MAX);
    for c in 0..clusters.model.k {
        let boxes: Vec<BBox2D> = clusters
            .samples
            .iter()
            .zip(&clusters.model.assignments)
            .filter(|(_, &a)| a == c)
            .map(|(s, _)| labels[s.frame][s.ann].bbox)
            .collect();
        if boxes.is_empty() {
            continue;
        }
        let d = model_dims_for_cluster(&boxes, cfg.base_width)?;
        best = (best.0.min(d.model_w), best.1.min(d.model_h));
    }
    Ok(best)
}

/// `train` stage: writes the bundle to `models/` and the per-stage log to
/// `train_log.jsonl`.
pub fn run_train(cfg: &RunConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let clusters = load_clusters(cfg)?;
    let frames = load_split(&cfg.train_dir, true)?;
    let ids: Vec<String> = frames.iter().map(|f| f.id.clone()).collect();
    if ids != clusters.frame_ids {
        return Err(Error::Config("training split changed since clustering; rerun cluster".into()));
    }
    let labels: Vec<Vec<Annotation3D>> = frames.iter().map(|f| f.labels.clone()).collect();
    let min_window = smallest_window(&clusters, &labels, cfg)?;
    let set = TrainingSet::from_frames(
        &frames,
        &cfg.class_name,
        &PyramidConfig {
            min_window,
            ..cfg.pyramid.clone()
        },
    )?;
    let (bundle, logs) = train_bundle(&set, &clusters, cfg)?;
    bundle.save(&cfg.models_dir())?;
    let mut text = String::new();
    for l in &logs {
        text.push_str(&serde_json::to_string(l)?);
        text.push('\n');
    }
    write_file(&cfg.out_dir.join("train_log.jsonl"), &text)?;
    Ok(bundle)
}

pub fn ensemble_spec(bundle: &ModelBundle, cfg: &RunConfig) -> Result<EnsembleSpec> {
    let mut spec = EnsembleSpec::new(bundle.models.clone())?;
    let mw = spec.pyramid.min_window;
    spec.pyramid = PyramidConfig {
        min_window: mw,
        ..bundle.manifest.pyramid.clone()
    };
    spec.nms_overlap = cfg.detect.nms_overlap;
    spec.nms_mode = cfg.detect.nms_mode;
    spec.calibrate = cfg.calibrate();
    spec.stride = cfg.detect.stride;
    Ok(spec)
}

/// Runs the ensemble over every image of `dir`, in file order.
pub fn detect_dir(dir: &Path, spec: &EnsembleSpec) -> Result<Vec<(String, EnsembleOutput)>> {
    let img_dir = dir.join("image_2");
    let files = if img_dir.is_dir() { list_images(&img_dir)? } else { list_images(dir)? };
    files
        .par_iter()
        .map(|(id, p)| {
            let im = Image::load(p)?;
            let pyr = build_pyramid(&im, &spec.pyramid)?;
            Ok((id.clone(), detect_on_pyramid(&pyr, spec)))
        })
        .collect()
}

/// Writes KITTI result files under `dir/data/` and `dir/detections.jsonl`.
pub fn write_detections(dir: &Path, class_name: &str, frames: &[(String, Vec<Detection>, Option<Vec<f64>>)]) -> Result<()> {
    let data = dir.join("data");
    if data.is_dir() {
        std::fs::remove_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    }
    std::fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    let mut jsonl = String::new();
    for (id, dets, alphas) in frames {
        write_file(&data.join(format!("{id}.txt")), &write_kitti_results(class_name, dets, alphas.as_deref()))?;
        for (i, d) in dets.iter().enumerate() {
            jsonl.push_str(&detection_json_line(id, d, alphas.as_ref().map(|a| a[i]))?);
            jsonl.push('\n');
        }
    }
    write_file(&dir.join("detections.jsonl"), &jsonl)
}

/// Per-model survivors kept next to the pooled results, for orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerModelRecord {
    pub id: String,
    pub pooled: Vec<Detection>,
    pub per_model: Vec<Vec<Detection>>,
}

/// `detect` stage over `cfg.test_dir`.
pub fn run_detect(cfg: &RunConfig) -> Result<Vec<(String, EnsembleOutput)>> {
    let bundle = ModelBundle::load(&cfg.models_dir())?;
    let spec = ensemble_spec(&bundle, cfg)?;
    let out = detect_dir(&cfg.test_dir, &spec)?;
    let dir = cfg.detections_dir();
    let frames: Vec<(String, Vec<Detection>, Option<Vec<f64>>)> =
        out.iter().map(|(id, o)| (id.clone(), o.detections.clone(), None)).collect();
    write_detections(&dir, &cfg.class_name, &frames)?;
    let mut per = String::new();
    for (id, o) in &out {
        per.push_str(&serde_json::to_string(&PerModelRecord {
            id: id.clone(),
            pooled: o.detections.clone(),
            per_model: o.per_model.clone(),
        })?);
        per.push('\n');
    }
    write_file(&dir.join("per_model.jsonl"), &per)?;
    Ok(out)
}

fn vote_bounds(bundle: &ModelBundle, calibrated: bool) -> Vec<(f64, f64)> {
    bundle
        .models
        .iter()
        .map(|m| if calibrated { (0.0, 1.0) } else { (m.calib_min, m.calib_max) })
        .collect()
}

/// Score vectors of detections that match a class instance, paired with
/// the instance's observation angle.
pub fn orientation_samples(
    outputs: &[(String, EnsembleOutput)],
    labels: &BTreeMap<String, Vec<Annotation3D>>,
    bounds: &[(f64, f64)],
    class_name: &str,
    min_overlap: f64,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut out = Vec::new();
    for (id, o) in outputs {
        let Some(gts) = labels.get(id) else { continue };
        let mut taken = vec![false; gts.len()];
        for d in &o.detections {
            let mut best: Option<(f64, usize)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] || g.class_name != class_name {
                    continue;
                }
                let ov = iou(&d.bbox, &g.bbox);
                if ov >= min_overlap && best.map_or(true, |(b, _)| ov > b) {
                    best = Some((ov, j));
                }
            }
            if let Some((_, j)) = best {
                taken[j] = true;
                out.push((score_vector(d, &o.per_model, bounds)?.values, gts[j].alpha));
            }
        }
    }
    Ok(out)
}

/// Trains the angle estimator on detections over the training split.
pub fn train_orientation_model(bundle: &ModelBundle, spec: &EnsembleSpec, cfg: &RunConfig) -> Result<OrientationModel> {
    let frames: Vec<Frame> = load_split(&cfg.train_dir, true)?;
    let take = if cfg.orientation.max_images == 0 {
        frames.len()
    } else {
        cfg.orientation.max_images.min(frames.len())
    };
    let frames = &frames[..take];
    let outputs: Vec<(String, EnsembleOutput)> = frames
        .par_iter()
        .map(|f| {
            let im = Image::load(&f.image_path)?;
            let pyr = build_pyramid(&im, &spec.pyramid)?;
            Ok((f.id.clone(), detect_on_pyramid(&pyr, spec)))
        })
        .collect::<Result<_>>()?;
    let labels: BTreeMap<String, Vec<Annotation3D>> = frames.iter().map(|f| (f.id.clone(), f.labels.clone())).collect();
    let samples = orientation_samples(
        &outputs,
        &labels,
        &vote_bounds(bundle, spec.calibrate),
        &cfg.class_name,
        cfg.orientation.min_overlap,
    )?;
    log::info!("orientation training on {} detections", samples.len());
    train_orientation(
        &samples,
        bundle.models.len(),
        cfg.orientation.kind,
        cfg.orientation.bins,
        &cfg.orientation.svm,
    )
}

/// `orient` stage: trains the estimator, then writes results with angles
/// for the detections of the `detect` stage.
pub fn run_orient(cfg: &RunConfig) -> Result<OrientationModel> {
    let bundle = ModelBundle::load(&cfg.models_dir())?;
    let spec = ensemble_spec(&bundle, cfg)?;
    let model = train_orientation_model(&bundle, &spec, cfg)?;
    write_file(&cfg.out_dir.join("orientation").join("model.json"), &(model.to_json()? + "\n"))?;
    let per_text = read_file(&cfg.detections_dir().join("per_model.jsonl"))?;
    let bounds = vote_bounds(&bundle, spec.calibrate);
    let mut frames = Vec::new();
    for line in per_text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: PerModelRecord = serde_json::from_str(line)?;
        let alphas = rec
            .pooled
            .iter()
            .map(|d| model.estimate(&score_vector(d, &rec.per_model, &bounds)?.values))
            .collect::<Result<Vec<f64>>>()?;
        frames.push((rec.id, rec.pooled, Some(alphas)));
    }
    write_detections(&cfg.results_dir(), &cfg.class_name, &frames)?;
    Ok(model)
}

/// `eval` stage: scores `results/` when present, else `detections/`.
pub fn run_eval(cfg: &RunConfig) -> Result<EvalSummary> {
    let results = cfg.results_dir().join("data");
    let dets = if results.is_dir() { results } else { cfg.detections_dir().join("data") };
    let gt = cfg.test_dir.join("label_2");
    if !gt.is_dir() {
        return Err(Error::Config(format!("missing label directory {}", gt.display())));
    }
    let summary = evaluate_dirs(&gt, &dets, &cfg.class_name, &cfg.eval.settings, cfg.eval.interpolation)?;
    write_outputs(&summary, &cfg.eval_dir())?;
    Ok(summary)
}

/// `synth` stage: writes the training and test splits.
pub fn run_synth(cfg: &RunConfig) -> Result<()> {
    write_split(&cfg.synth_train, &cfg.train_dir)?;
    write_split(&cfg.synth_test, &cfg.test_dir)
}

/// Every stage after data generation, in order.
pub fn run_all(cfg: &RunConfig) -> Result<EvalSummary> {
    run_cluster(cfg)?;
    run_train(cfg)?;
    run_detect(cfg)?;
    run_orient(cfg)?;
    run_eval(cfg)
}

/// One-line human summary of an evaluation.
pub fn summary_line(s: &EvalSummary) -> String {
    let mut out = String::new();
    for r in &s.results {
        let _ = write!(out, "{}: AP {:.4} AOS {:.4}  ", r.settings.name, r.ap, r.aos);
    }
    out.trim_end().to_string()
}

pub fn load_labels(dir: &Path) -> Result<BTreeMap<String, Vec<Annotation3D>>> {
    load_label_dir(dir)
}
