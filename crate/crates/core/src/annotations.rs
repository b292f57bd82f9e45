//! KITTI label parsing and the geometric descriptor used to form
//! subcategories: observation angle, aspect ratio, truncation, occlusion
//! level and type, and statistics of the nearest occluder.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox2D;
use crate::error::{Error, Result};

/// KITTI occlusion index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Occlusion {
    NotOccluded,
    Partial,
    Heavy,
    Unknown,
}

impl Occlusion {
    pub fn from_index(i: i64) -> Option<Self> {
        match i {
            0 => Some(Occlusion::NotOccluded),
            1 => Some(Occlusion::Partial),
            2 => Some(Occlusion::Heavy),
            // DontCare rows carry -1
            3 | -1 => Some(Occlusion::Unknown),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One labeled object: a KITTI label line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation3D {
    pub class_name: String,
    pub truncation: f64,
    pub occlusion: Occlusion,
    /// Observation angle, radians.
    pub alpha: f64,
    pub bbox: BBox2D,
    /// Height, width, length in meters.
    pub dims_hwl: [f64; 3],
    /// Camera coordinates in meters.
    pub location: [f64; 3],
    /// Yaw around the camera Y axis.
    pub rotation_y: f64,
    /// Present on detector result lines only.
    pub score: Option<f64>,
}

pub const DONT_CARE: &str = "DontCare";

impl Annotation3D {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == DONT_CARE
    }

    /// Euclidean distance of the object from the camera center.
    pub fn camera_distance(&self) -> f64 {
        norm3(&self.location)
    }
}

fn norm3(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn parse_real(tokens: &[&str], idx: usize) -> Result<f64> {
    let tok = tokens.get(idx).ok_or_else(|| Error::Parse {
        token: idx + 1,
        msg: "missing field".into(),
    })?;
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        token: idx + 1,
        msg: format!("not a number: {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Range(format!("token {} is not finite", idx + 1)));
    }
    Ok(v)
}

/// Parse one KITTI label line. A 16th (score) field is accepted.
pub fn parse_kitti_label(line: &str) -> Result<Annotation3D> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 15 {
        return Err(Error::Parse {
            token: tokens.len() + 1,
            msg: format!("expected at least 15 fields, found {}", tokens.len()),
        });
    }
    let class_name = tokens[0].to_string();
    let truncation = parse_real(&tokens, 1)?;
    let occ_raw = parse_real(&tokens, 2)?;
    let occlusion = if occ_raw.fract() == 0.0 {
        Occlusion::from_index(occ_raw as i64)
    } else {
        None
    }
    .ok_or_else(|| Error::Parse {
        token: 3,
        msg: format!("occlusion index must be one of -1,0,1,2,3, got {occ_raw}"),
    })?;
    let alpha = parse_real(&tokens, 3)?;
    let mut f = [0.0; 11];
    for (k, slot) in f.iter_mut().enumerate() {
        *slot = parse_real(&tokens, 4 + k)?;
    }
    let bbox = BBox2D::new(f[0], f[1], f[2], f[3])?;
    let score = if tokens.len() > 15 {
        Some(parse_real(&tokens, 15)?)
    } else {
        None
    };
    Ok(Annotation3D {
        class_name,
        truncation,
        occlusion,
        alpha,
        bbox,
        dims_hwl: [f[4], f[5], f[6]],
        location: [f[7], f[8], f[9]],
        rotation_y: f[10],
        score,
    })
}

impl fmt::Display for Annotation3D {
    /// Canonical label line. Values use the shortest round-trip decimal form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let occ: i64 = if self.is_dont_care() && self.occlusion == Occlusion::Unknown {
            -1
        } else {
            self.occlusion.index() as i64
        };
        write!(
            f,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            self.class_name,
            self.truncation,
            occ,
            self.alpha,
            self.bbox.x1,
            self.bbox.y1,
            self.bbox.x2,
            self.bbox.y2,
            self.dims_hwl[0],
            self.dims_hwl[1],
            self.dims_hwl[2],
            self.location[0],
            self.location[1],
            self.location[2],
            self.rotation_y
        )?;
        if let Some(s) = self.score {
            write!(f, " {s}")?;
        }
        Ok(())
    }
}

pub fn parse_label_file(text: &str) -> Result<Vec<Annotation3D>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_kitti_label)
        .collect()
}

pub fn read_label_file(path: &Path) -> Result<Vec<Annotation3D>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_label_file(&text).map_err(|e| match e {
        Error::Parse { token, msg } => Error::Parse {
            token,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Map an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Yaw relative to the ray from the camera center to the object.
pub fn observation_angle(location: &[f64; 3], rotation_y: f64) -> Result<f64> {
    let (x, z) = (location[0], location[2]);
    if x == 0.0 && z == 0.0 {
        return Err(Error::DegenerateGeometry(
            "object located at the camera center".into(),
        ));
    }
    Ok(wrap_angle(rotation_y - x.atan2(z)))
}

/// Index into `others` of the occluder of `target`: among boxes that share
/// pixels with the target and are strictly closer to the camera, the one
/// nearest to the target in 3D. Ties resolve to the lowest index.
pub fn find_occluder(target: &Annotation3D, others: &[Annotation3D]) -> Option<usize> {
    let target_dist = target.camera_distance();
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in others.iter().enumerate() {
        if cand.bbox.intersection_area(&target.bbox) <= 0.0 {
            continue;
        }
        if cand.camera_distance() >= target_dist {
            continue;
        }
        let d = norm3(&[
            cand.location[0] - target.location[0],
            cand.location[1] - target.location[1],
            cand.location[2] - target.location[2],
        ]);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Fraction of the occludee's box covered by the occluder's box.
pub fn occlusion_level(occludee: &BBox2D, occluder: &BBox2D) -> f64 {
    (occludee.intersection_area(occluder) / occludee.area()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// Geometric subcategorization descriptor. Angles are stored as
/// `(cos, sin)` so Euclidean distances respect circularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoFeatures {
    pub observation_angle: [f64; 2],
    /// Box width over height.
    pub aspect_ratio: f64,
    pub truncation: f64,
    pub occlusion_level: f64,
    pub occlusion_type: [f64; 4],
    pub rel_orientation: [f64; 2],
    pub occluder_orientation: [f64; 2],
    pub rel_position: [f64; 3],
    /// 0 = left, 1 = right.
    pub occluder_side: f64,
    pub has_occluder: f64,
}

impl GeoFeatures {
    pub const DIM: usize = 18;

    /// Observation angle in radians recovered from the `(cos, sin)` pair.
    pub fn angle(&self) -> f64 {
        wrap_angle(self.observation_angle[1].atan2(self.observation_angle[0]))
    }

    /// Flat vector in field order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::DIM);
        v.extend_from_slice(&self.observation_angle);
        v.push(self.aspect_ratio);
        v.push(self.truncation);
        v.push(self.occlusion_level);
        v.extend_from_slice(&self.occlusion_type);
        v.extend_from_slice(&self.rel_orientation);
        v.extend_from_slice(&self.occluder_orientation);
        v.extend_from_slice(&self.rel_position);
        v.push(self.occluder_side);
        v.push(self.has_occluder);
        v
    }
}

fn unit(a: f64) -> [f64; 2] {
    [a.cos(), a.sin()]
}

/// Descriptor for `all[target]`; every other entry of `all` is an occluder
/// candidate. Truncation is taken verbatim from the label.
pub fn geometric_features(target: usize, all: &[Annotation3D]) -> Result<GeoFeatures> {
    let t = all
        .get(target)
        .ok_or_else(|| Error::invalid(format!("target index {target} out of range")))?;
    let alpha = observation_angle(&t.location, t.rotation_y)?;
    let mut occlusion_type = [0.0; 4];
    occlusion_type[t.occlusion.index()] = 1.0;
    let mut g = GeoFeatures {
        observation_angle: unit(alpha),
        aspect_ratio: t.bbox.width() / t.bbox.height(),
        truncation: t.truncation,
        occlusion_level: 0.0,
        occlusion_type,
        rel_orientation: [0.0; 2],
        occluder_orientation: [0.0; 2],
        rel_position: [0.0; 3],
        occluder_side: 0.0,
        has_occluder: 0.0,
    };

    let others: Vec<Annotation3D> = all
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, a)| a.clone())
        .collect();
    if let Some(j) = find_occluder(t, &others) {
        let o = &others[j];
        g.has_occluder = 1.0;
        g.occlusion_level = occlusion_level(&t.bbox, &o.bbox);
        g.rel_orientation = unit(wrap_angle(t.rotation_y - o.rotation_y));
        g.occluder_orientation = unit(o.rotation_y);
        g.rel_position = [
            t.location[0] - o.location[0],
            t.location[1] - o.location[1],
            t.location[2] - o.location[2],
        ];
        g.occluder_side = if o.bbox.center().0 < t.bbox.center().0 {
            0.0
        } else {
            1.0
        };
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = "Car 0.10 1 -1.57 100 100 200 180 1.5 1.6 3.9 -2.0 1.7 20.0 -1.47";

    pub(crate) fn car(bbox: (f64, f64, f64, f64), loc: [f64; 3], ry: f64) -> Annotation3D {
        Annotation3D {
            class_name: "Car".into(),
            truncation: 0.0,
            occlusion: Occlusion::NotOccluded,
            alpha: 0.0,
            bbox: BBox2D::new(bbox.0, bbox.1, bbox.2, bbox.3).unwrap(),
            dims_hwl: [1.5, 1.6, 3.9],
            location: loc,
            rotation_y: ry,
            score: None,
        }
    }

    #[test]
    fn parses_positional_fields() {
        let a = parse_kitti_label(LINE).unwrap();
        assert_eq!(a.class_name, "Car");
        assert_eq!(a.truncation, 0.10);
        assert_eq!(a.occlusion, Occlusion::Partial);
        assert_eq!(a.alpha, -1.57);
        assert_eq!(a.bbox, BBox2D::new(100.0, 100.0, 200.0, 180.0).unwrap());
        assert_eq!(a.dims_hwl, [1.5, 1.6, 3.9]);
        assert_eq!(a.location, [-2.0, 1.7, 20.0]);
        assert_eq!(a.rotation_y, -1.47);
        assert_eq!(a.score, None);
    }

    #[test]
    fn short_line_reports_first_missing_token() {
        match parse_kitti_label("Car 0.10 1") {
            Err(Error::Parse { token, .. }) => assert_eq!(token, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_and_non_finite() {
        let bad = LINE.replace("-1.57", "abc");
        assert!(matches!(parse_kitti_label(&bad), Err(Error::Parse { token: 4, .. })));
        let inf = LINE.replace("-1.57", "inf");
        assert!(matches!(parse_kitti_label(&inf), Err(Error::Range(_))));
    }

    #[test]
    fn tolerates_score_and_dont_care() {
        let a = parse_kitti_label(&format!("{LINE} 0.93")).unwrap();
        assert_eq!(a.score, Some(0.93));
        let dc = "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10";
        let d = parse_kitti_label(dc).unwrap();
        assert!(d.is_dont_care());
        assert_eq!(parse_kitti_label(&d.to_string()).unwrap(), d);
        assert!(d.to_string().starts_with("DontCare -1 -1 "));
    }

    #[test]
    fn wrap_conventions() {
        assert!((wrap_angle(1.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(0.3), 0.3);
    }

    #[test]
    fn observation_angle_examples() {
        assert_eq!(observation_angle(&[0.0, 1.7, 10.0], 0.5).unwrap(), 0.5);
        let a = observation_angle(&[10.0, 1.7, 10.0], 0.0).unwrap();
        assert!((a + PI / 4.0).abs() < 1e-12);
        assert_eq!(observation_angle(&[0.0, 1.7, 10.0], PI).unwrap(), PI);
        assert!(matches!(
            observation_angle(&[0.0, 1.7, 0.0], 0.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn occluder_search() {
        let t = car((100.0, 100.0, 200.0, 160.0), [0.0, 1.7, 20.0], 0.0);
        assert_eq!(find_occluder(&t, &[]), None);
        let front = car((150.0, 110.0, 260.0, 180.0), [3.0, 1.7, 15.0], 0.0);
        assert_eq!(find_occluder(&t, &[front.clone()]), Some(0));
        // behind the target: not an occluder
        let behind = car((150.0, 110.0, 260.0, 180.0), [3.0, 1.7, 25.0], 0.0);
        assert_eq!(find_occluder(&t, &[behind]), None);
        // in front but no shared pixels
        let apart = car((300.0, 110.0, 360.0, 180.0), [3.0, 1.7, 15.0], 0.0);
        assert_eq!(find_occluder(&t, &[apart]), None);
        // two qualifiers at 4 m and 6 m from the target
        let at4 = car((120.0, 100.0, 180.0, 170.0), [0.0, 1.7, 16.0], 0.0);
        let at6 = car((120.0, 100.0, 180.0, 170.0), [0.0, 1.7, 14.0], 0.0);
        assert_eq!(find_occluder(&t, &[at6, at4]), Some(1));
    }

    #[test]
    fn occlusion_level_examples() {
        let a = BBox2D::new(0.0, 0.0, 100.0, 100.0).unwrap();
        let half = BBox2D::new(50.0, 0.0, 150.0, 100.0).unwrap();
        assert_eq!(occlusion_level(&a, &half), 0.5);
        let far = BBox2D::new(200.0, 0.0, 300.0, 100.0).unwrap();
        assert_eq!(occlusion_level(&a, &far), 0.0);
        let cover = BBox2D::new(-10.0, -10.0, 110.0, 110.0).unwrap();
        assert_eq!(occlusion_level(&a, &cover), 1.0);
    }

    #[test]
    fn isolated_square_car() {
        let all = vec![car((0.0, 0.0, 50.0, 50.0), [0.0, 1.7, 10.0], 0.2)];
        let g = geometric_features(0, &all).unwrap();
        assert_eq!(g.has_occluder, 0.0);
        assert_eq!(g.aspect_ratio, 1.0);
        assert_eq!(g.occlusion_level, 0.0);
        assert_eq!(g.occlusion_type, [1.0, 0.0, 0.0, 0.0]);
        assert!((g.angle() - 0.2).abs() < 1e-12);
        assert_eq!(g.to_vec().len(), GeoFeatures::DIM);
    }

    #[test]
    fn occluder_to_the_left_with_same_yaw() {
        let all = vec![
            car((100.0, 100.0, 200.0, 160.0), [0.0, 1.7, 20.0], 0.7),
            car((60.0, 110.0, 150.0, 180.0), [-2.0, 1.7, 12.0], 0.7),
        ];
        let g = geometric_features(0, &all).unwrap();
        assert_eq!(g.has_occluder, 1.0);
        assert_eq!(g.rel_orientation, [1.0, 0.0]);
        assert_eq!(g.occluder_side, 0.0);
        assert_eq!(g.rel_position, [2.0, 0.0, 8.0]);
    }
}
