//! KITTI-layout directories (`image_2/`, `label_2/`) and in-memory training
//! sets with cached channel pyramids.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::annotations::{read_label_file, Annotation3D};
use crate::channels::{build_pyramid, ChannelPyramid, PyramidConfig};
use crate::error::{Error, Result};
use crate::image::Image;

const IMAGE_EXTS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: String,
    pub image_path: PathBuf,
    pub labels: Vec<Annotation3D>,
}

/// Image files of `dir`, sorted by file stem.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        if IMAGE_EXTS.contains(&ext.as_str()) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), p.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Frames of a KITTI split. With `require_labels`, every image must have a
/// label file; otherwise missing label files mean no objects.
pub fn load_split(dir: &Path, require_labels: bool) -> Result<Vec<Frame>> {
    let img_dir = dir.join("image_2");
    let lbl_dir = dir.join("label_2");
    if !img_dir.is_dir() {
        return Err(Error::Config(format!("missing image directory {}", img_dir.display())));
    }
    if require_labels && !lbl_dir.is_dir() {
        return Err(Error::Config(format!("missing label directory {}", lbl_dir.display())));
    }
    list_images(&img_dir)?
        .into_iter()
        .map(|(id, image_path)| {
            let lp = lbl_dir.join(format!("{id}.txt"));
            let labels = if lp.is_file() {
                read_label_file(&lp)?
            } else if require_labels {
                return Err(Error::Config(format!("missing label file {}", lp.display())));
            } else {
                Vec::new()
            };
            Ok(Frame { id, image_path, labels })
        })
        .collect()
}

/// Labels keyed by frame id from a directory of `<id>.txt` files; absent
/// directories give an empty map.
pub fn load_label_dir(dir: &Path) -> Result<std::collections::BTreeMap<String, Vec<Annotation3D>>> {
    let mut out = std::collections::BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().and_then(|e| e.to_str()) == Some("txt") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), read_label_file(&p)?);
            }
        }
    }
    Ok(out)
}

/// Decoded images, their labels, and one channel pyramid per image.
pub struct TrainingSet {
    pub class_name: String,
    pub ids: Vec<String>,
    pub images: Vec<Image>,
    pub labels: Vec<Vec<Annotation3D>>,
    pub pyramids: Vec<ChannelPyramid>,
}

impl TrainingSet {
    pub fn from_frames(frames: &[Frame], class_name: &str, pyramid: &PyramidConfig) -> Result<Self> {
        let images: Vec<Image> = frames
            .par_iter()
            .map(|f| Image::load(&f.image_path))
            .collect::<Result<_>>()?;
        Self::from_images(
            frames.iter().map(|f| f.id.clone()).collect(),
            images,
            frames.iter().map(|f| f.labels.clone()).collect(),
            class_name,
            pyramid,
        )
    }

    pub fn from_images(
        ids: Vec<String>,
        images: Vec<Image>,
        labels: Vec<Vec<Annotation3D>>,
        class_name: &str,
        pyramid: &PyramidConfig,
    ) -> Result<Self> {
        if images.len() != labels.len() || ids.len() != images.len() {
            return Err(Error::DimensionMismatch {
                expected: images.len(),
                got: labels.len(),
            });
        }
        let pyramids = images
            .par_iter()
            .map(|im| build_pyramid(im, pyramid))
            .collect::<Result<_>>()?;
        Ok(TrainingSet {
            class_name: class_name.to_string(),
            ids,
            images,
            labels,
            pyramids,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Boxes of every instance of the target class in image `i`.
    pub fn class_boxes(&self, i: usize) -> Vec<crate::bbox::BBox2D> {
        self.labels[i]
            .iter()
            .filter(|a| a.class_name == self.class_name)
            .map(|a| a.bbox)
            .collect()
    }
}
