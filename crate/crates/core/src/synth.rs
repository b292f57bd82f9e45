//! Deterministic synthetic street scenes with KITTI-format labels.
//!
//! Vehicles stand on a ground plane seen by a fixed pinhole camera. Each
//! sprite's 2D aspect ratio and face texture are functions of its
//! observation angle, so orientation subcategories are visually distinct.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{find_occluder, occlusion_level, wrap_angle, Annotation3D, Occlusion};
use crate::bbox::BBox2D;
use crate::error::{Error, Result};
use crate::image::Image;

/// Vehicle size in meters (height, width, length).
pub const CAR_HWL: [f64; 3] = [1.5, 1.6, 3.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_images: usize,
    pub image_w: usize,
    pub image_h: usize,
    /// Inclusive range.
    pub objects_per_image: (usize, usize),
    /// Observation angles to draw from.
    pub orientation_set: Vec<f64>,
    pub occlusion_prob: f64,
    pub truncation_prob: f64,
    pub seed: u64,
    pub class_name: String,
    pub focal: f64,
    pub camera_height: f64,
    /// Depth range in meters.
    pub depth: (f64, f64),
    pub distractors: (usize, usize),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_images: 100,
            image_w: 384,
            image_h: 144,
            objects_per_image: (1, 3),
            orientation_set: bin_center_angles(8),
            occlusion_prob: 0.3,
            truncation_prob: 0.1,
            seed: 0,
            class_name: "Car".into(),
            focal: 300.0,
            camera_height: 1.65,
            depth: (7.0, 14.0),
            distractors: (3, 8),
        }
    }
}

/// `n` angles at the centers of `n` equal bins starting at `-pi`.
pub fn bin_center_angles(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| -PI + (k as f64 + 0.5) * 2.0 * PI / n as f64)
        .collect()
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_w < 64 || self.image_h < 64 {
            return Err(Error::Config("synthetic images must be at least 64x64".into()));
        }
        for (name, p) in [("occlusion_prob", self.occlusion_prob), ("truncation_prob", self.truncation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.orientation_set.is_empty() {
            return Err(Error::Config("orientation set is empty".into()));
        }
        if self.objects_per_image.0 > self.objects_per_image.1 {
            return Err(Error::Config("objects_per_image range is reversed".into()));
        }
        if !(self.depth.0 > 0.0 && self.depth.0 <= self.depth.1) {
            return Err(Error::Config("depth range must be positive and ordered".into()));
        }
        Ok(())
    }

    fn cx(&self) -> f64 {
        self.image_w as f64 / 2.0
    }

    /// Horizon row; the ground plane lies below it.
    fn cy(&self) -> f64 {
        self.image_h as f64 * 0.35
    }
}

/// Sprite height over width for an observation angle.
pub fn sprite_aspect(alpha: f64) -> f64 {
    0.3 + 0.8 * alpha.sin().powi(2)
}

/// A rendered object with its exact (unclipped) geometry.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub label: Annotation3D,
    pub full_box: BBox2D,
    /// Fraction of the box covered by its nearest closer occluder.
    pub occlusion_level: f64,
}

#[derive(Debug, Clone)]
struct Placement {
    alpha: f64,
    x: f64,
    z: f64,
    full: BBox2D,
    color: [f32; 3],
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn project(spec: &SynthSpec, alpha: f64, x: f64, z: f64) -> BBox2D {
    let h = spec.focal * CAR_HWL[0] / z;
    let w = h / sprite_aspect(alpha);
    let u = spec.cx() + spec.focal * x / z;
    let bottom = spec.cy() + spec.focal * spec.camera_height / z;
    BBox2D {
        x1: u - w / 2.0,
        y1: bottom - h,
        x2: u + w / 2.0,
        y2: bottom,
    }
}

const PALETTE: [[f32; 3]; 7] = [
    [0.75, 0.12, 0.10],
    [0.15, 0.25, 0.65],
    [0.88, 0.88, 0.86],
    [0.60, 0.62, 0.65],
    [0.12, 0.12, 0.13],
    [0.18, 0.45, 0.22],
    [0.85, 0.65, 0.15],
];

fn rng_for(spec: &SynthSpec, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    rng
}

pub fn render_scene(spec: &SynthSpec, index: usize) -> Result<(Image, Vec<Annotation3D>)> {
    let (img, objs) = render_scene_detailed(spec, index)?;
    Ok((img, objs.into_iter().map(|o| o.label).collect()))
}

pub fn render_scene_detailed(spec: &SynthSpec, index: usize) -> Result<(Image, Vec<SceneObject>)> {
    spec.validate()?;
    if index >= spec.n_images {
        return Err(Error::invalid(format!("scene {index} out of range ({} scenes)", spec.n_images)));
    }
    let mut rng = rng_for(spec, index);
    let (w, h) = (spec.image_w, spec.image_h);
    let mut img = background(spec, &mut rng);

    let n_obj = rng.gen_range(spec.objects_per_image.0..=spec.objects_per_image.1);
    let mut placed: Vec<Placement> = Vec::new();
    for k in 0..n_obj {
        let occlude = k > 0 && rng.gen::<f64>() < spec.occlusion_prob;
        let truncate = rng.gen::<f64>() < spec.truncation_prob;
        let mut done = false;
        for _attempt in 0..50 {
            let alpha = spec.orientation_set[rng.gen_range(0..spec.orientation_set.len())];
            let color = PALETTE[rng.gen_range(0..PALETTE.len())];
            let (x, z) = if occlude {
                // sit in front of an existing object, shifted sideways
                let t = &placed[rng.gen_range(0..placed.len())];
                let z = t.z - rng.gen_range(1.5..3.5);
                if z < spec.depth.0 * 0.8 {
                    continue;
                }
                let shift = rng.gen_range(0.35..0.8) * t.full.width() * if rng.gen() { 1.0 } else { -1.0 };
                let u = t.full.center().0 + shift;
                ((u - spec.cx()) * z / spec.focal, z)
            } else {
                let z = rng.gen_range(spec.depth.0..spec.depth.1);
                let u = if truncate {
                    if rng.gen() {
                        rng.gen_range(-0.05..0.05) * w as f64
                    } else {
                        rng.gen_range(0.95..1.05) * w as f64
                    }
                } else {
                    rng.gen_range(0.1..0.9) * w as f64
                };
                ((u - spec.cx()) * z / spec.focal, z)
            };
            let full = project(spec, alpha, x, z);
            if full.y1 < 0.0 || full.y2 > h as f64 {
                continue;
            }
            let visible = full.clip(w as f64, h as f64);
            let Some(vis) = visible else { continue };
            let trunc = 1.0 - vis.area() / full.area();
            if !truncate && trunc > 0.0 {
                continue;
            }
            if trunc > 0.5 {
                continue;
            }
            // only the chosen pair may overlap
            let mut ok = true;
            let mut partner = None;
            for (j, p) in placed.iter().enumerate() {
                let inter = p.full.intersection_area(&full);
                if inter <= 0.0 {
                    continue;
                }
                if !occlude || partner.is_some() {
                    ok = false;
                    break;
                }
                let level = inter / p.full.area();
                if !(0.1..=0.7).contains(&level) || inter / full.area() > 0.5 {
                    ok = false;
                    break;
                }
                partner = Some(j);
            }
            if !ok || (occlude && partner.is_none()) {
                continue;
            }
            placed.push(Placement {
                alpha,
                x,
                z,
                full,
                color,
            });
            done = true;
            break;
        }
        if !done {
            log::warn!("scene {index}: could not place object {k}; continuing with fewer");
        }
    }

    // far to near so closer sprites cover farther ones
    let mut order: Vec<usize> = (0..placed.len()).collect();
    order.sort_by(|&a, &b| placed[b].z.total_cmp(&placed[a].z).then(a.cmp(&b)));
    for &i in &order {
        let p = &placed[i];
        draw_vehicle(&mut img, &p.full, p.alpha, p.color);
    }

    let mut labels: Vec<Annotation3D> = placed
        .iter()
        .map(|p| {
            let vis = p.full.clip(w as f64, h as f64).expect("placement is visible");
            let bbox = BBox2D {
                x1: round2(vis.x1),
                y1: round2(vis.y1),
                x2: round2(vis.x2),
                y2: round2(vis.y2),
            };
            let (x, z) = (round2(p.x), round2(p.z));
            let ry = wrap_angle(p.alpha + x.atan2(z));
            Annotation3D {
                class_name: spec.class_name.clone(),
                truncation: round2(1.0 - vis.area() / p.full.area()),
                occlusion: Occlusion::NotOccluded,
                alpha: p.alpha,
                bbox,
                dims_hwl: CAR_HWL,
                location: [x, spec.camera_height, z],
                rotation_y: ry,
                score: None,
            }
        })
        .collect();
    let mut levels = vec![0.0; placed.len()];
    for i in 0..labels.len() {
        if let Some(j) = find_occluder(&labels[i], &labels) {
            levels[i] = occlusion_level(&placed[i].full, &placed[j].full);
        }
    }
    for (l, &lv) in labels.iter_mut().zip(&levels) {
        l.occlusion = if lv <= 0.0 {
            Occlusion::NotOccluded
        } else if lv <= 0.5 {
            Occlusion::Partial
        } else {
            Occlusion::Heavy
        };
    }
    let objects = labels
        .into_iter()
        .zip(placed)
        .zip(levels)
        .map(|((label, p), occlusion_level)| SceneObject {
            label,
            full_box: p.full,
            occlusion_level,
        })
        .collect();
    Ok((img, objects))
}

fn background(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = (spec.image_w, spec.image_h);
    let horizon = spec.cy();
    // coarse color field, bilinearly upsampled
    let (gw, gh) = (12usize, 6usize);
    let grid: Vec<[f32; 3]> = (0..gw * gh)
        .map(|_| [rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)])
        .collect();
    let mut img = Image::new(w, h).expect("validated dimensions");
    for y in 0..h {
        for x in 0..w {
            let fx = x as f32 / w as f32 * (gw - 1) as f32;
            let fy = y as f32 / h as f32 * (gh - 1) as f32;
            let (x0, y0) = (fx as usize, fy as usize);
            let (x1, y1) = ((x0 + 1).min(gw - 1), (y0 + 1).min(gh - 1));
            let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
            let base: [f32; 3] = if (y as f64) < horizon {
                [0.62, 0.72, 0.85]
            } else {
                [0.42, 0.42, 0.40]
            };
            let mut px = [0.0; 3];
            for c in 0..3 {
                let top = grid[y0 * gw + x0][c] * (1.0 - ax) + grid[y0 * gw + x1][c] * ax;
                let bot = grid[y1 * gw + x0][c] * (1.0 - ax) + grid[y1 * gw + x1][c] * ax;
                let n: f32 = rng.gen_range(-0.04..0.04);
                px[c] = (base[c] + top * (1.0 - ay) + bot * ay + n).clamp(0.0, 1.0);
            }
            img.set(x, y, px);
        }
    }
    let n_dis = rng.gen_range(spec.distractors.0..=spec.distractors.1);
    for _ in 0..n_dis {
        let dw = rng.gen_range(6.0..70.0f64);
        let dh = rng.gen_range(6.0..50.0f64);
        let x0 = rng.gen_range(-10.0..w as f64);
        let y0 = rng.gen_range(-10.0..h as f64);
        let color = [rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()];
        let striped = rng.gen::<f64>() < 0.4;
        let period = rng.gen_range(3.0..9.0f64);
        for y in (y0.max(0.0) as usize)..((y0 + dh).min(h as f64) as usize) {
            for x in (x0.max(0.0) as usize)..((x0 + dw).min(w as f64) as usize) {
                let dark = striped && ((x as f64 - x0) / period).floor() as i64 % 2 == 0;
                let k = if dark { 0.5 } else { 1.0 };
                img.set(x, y, [color[0] * k, color[1] * k, color[2] * k]);
            }
        }
    }
    img
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn scale(a: [f32; 3], k: f32) -> [f32; 3] {
    [(a[0] * k).min(1.0), (a[1] * k).min(1.0), (a[2] * k).min(1.0)]
}

const GLASS: [f32; 3] = [0.12, 0.16, 0.24];
const TIRE: [f32; 3] = [0.05, 0.05, 0.05];

/// Paint one vehicle sprite. The side face spans `|cos a| L` and the end
/// face `|sin a| W` of the box width; the end shows the front when
/// `sin a < 0`, and the vehicle heads right when `cos a > 0`.
fn draw_vehicle(img: &mut Image, full: &BBox2D, alpha: f64, body: [f32; 3]) {
    let side_w = alpha.cos().abs() * CAR_HWL[2];
    let end_w = alpha.sin().abs() * CAR_HWL[1];
    let p_side = side_w / (side_w + end_w);
    let heading_right = alpha.cos() > 0.0;
    let front = alpha.sin() < 0.0;
    let end_on_right = heading_right == front;
    let (w, h) = (img.width as i64, img.height as i64);
    let x_lo = full.x1.floor().max(0.0) as i64;
    let x_hi = (full.x2.ceil() as i64).min(w);
    let y_lo = full.y1.floor().max(0.0) as i64;
    let y_hi = (full.y2.ceil() as i64).min(h);
    for py in y_lo..y_hi {
        for px in x_lo..x_hi {
            let cxp = px as f64 + 0.5;
            let cyp = py as f64 + 0.5;
            if cxp < full.x1 || cxp >= full.x2 || cyp < full.y1 || cyp >= full.y2 {
                continue;
            }
            let s = (cxp - full.x1) / full.width();
            let t = (cyp - full.y1) / full.height();
            let in_end = if end_on_right { s > p_side } else { s < 1.0 - p_side };
            let color = if in_end {
                let e = if end_on_right {
                    (s - p_side) / (1.0 - p_side)
                } else {
                    s / (1.0 - p_side)
                };
                end_face(e, t, body, front)
            } else {
                let local = if end_on_right { s / p_side } else { (s - (1.0 - p_side)) / p_side };
                // 0 at the rear, 1 at the front
                let along = if heading_right { local } else { 1.0 - local };
                side_face(along, t, body, heading_right)
            };
            img.set(px as usize, py as usize, color);
        }
    }
}

fn side_face(along: f64, t: f64, body: [f32; 3], heading_right: bool) -> [f32; 3] {
    let shaded = scale(body, 0.85);
    // wheels
    for c in [0.2, 0.8] {
        let dx = (along - c) * 2.6;
        let dy = t - 0.86;
        if dx * dx + dy * dy < 0.14 * 0.14 * 1.0 && t > 0.72 {
            return TIRE;
        }
    }
    // cabin and windows, sloping toward the front
    let roof_front = 0.78;
    let roof_rear = 0.12;
    if t < 0.42 {
        if along < roof_rear || along > roof_front + (0.42 - t) * 0.4 {
            return scale(shaded, 0.55);
        }
        if t > 0.1 && !(0.44..0.5).contains(&along) {
            return GLASS;
        }
        return shaded;
    }
    // diagonal trim whose slant encodes the heading
    let slope = if heading_right { 1.0 } else { -1.0 };
    let phase = ((along * 6.0 + slope * t * 3.0).rem_euclid(1.0)) < 0.18;
    if (0.52..0.62).contains(&t) && phase {
        return scale(body, 1.35);
    }
    if t > 0.62 && t < 0.68 {
        return mix(shaded, [0.9, 0.9, 0.9], 0.5);
    }
    shaded
}

fn end_face(e: f64, t: f64, body: [f32; 3], front: bool) -> [f32; 3] {
    if t < 0.42 {
        if t > 0.1 && e > 0.1 && e < 0.9 {
            return if front { GLASS } else { mix(GLASS, [0.5, 0.55, 0.6], 0.35) };
        }
        return scale(body, 0.7);
    }
    let corner = e < 0.22 || e > 0.78;
    if front {
        if corner && (0.5..0.64).contains(&t) {
            return [1.0, 0.98, 0.8];
        }
        if !corner && (0.56..0.74).contains(&t) {
            return [0.08, 0.08, 0.09];
        }
    } else {
        if corner && (0.48..0.64).contains(&t) {
            return [0.9, 0.08, 0.06];
        }
        if !corner && (0.6..0.7).contains(&t) {
            return [0.85, 0.85, 0.8];
        }
    }
    if t > 0.86 {
        return TIRE;
    }
    body
}

/// Render `spec.n_images` scenes into `dir/image_2` and `dir/label_2`.
pub fn write_split(spec: &SynthSpec, dir: &Path) -> Result<()> {
    use rayon::prelude::*;
    let img_dir = dir.join("image_2");
    let lbl_dir = dir.join("label_2");
    for d in [&img_dir, &lbl_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    (0..spec.n_images).into_par_iter().try_for_each(|i| {
        let (img, labels) = render_scene(spec, i)?;
        img.save(&img_dir.join(format!("{i:06}.png")))?;
        let mut text = String::new();
        for l in &labels {
            text.push_str(&l.to_string());
            text.push('\n');
        }
        let p = lbl_dir.join(format!("{i:06}.txt"));
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    })
}
