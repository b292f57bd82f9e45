//! Aggregated channel features: 3 LUV planes, normalized gradient
//! magnitude, and 6 soft-binned orientation planes, summed over 4x4 cells,
//! plus the scale-approximated feature pyramid built from them.

use std::f32::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resample, Image, Plane};

pub const N_CHANNELS: usize = 10;
pub const N_ORIENTS: usize = 6;
/// Side of the aggregation cell in pixels.
pub const CELL: usize = 4;

/// Radius of the pre-gradient smoothing filter.
const PRE_SMOOTH_RADIUS: usize = 1;
/// Radius of the triangle filter used for magnitude normalization (11x11).
const NORM_RADIUS: usize = 5;
/// Normalization constant for `M / (M_smooth + eps)`.
const NORM_EPS: f32 = 0.005;

// Affine maps taking CIE L*u*v* (D65) for sRGB inputs into [0, 1].
const L_SCALE: f32 = 1.0 / 100.0;
const U_OFFSET: f32 = 88.0;
const V_OFFSET: f32 = 140.0;
const UV_SCALE: f32 = 1.0 / 270.0;

const WHITE_X: f32 = 0.950_47;
const WHITE_Y: f32 = 1.0;
const WHITE_Z: f32 = 1.088_83;

fn srgb_to_linear(c: f32) -> f32 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Unscaled CIE L*u*v* of an sRGB triple (D65 white point).
pub fn srgb_to_cieluv(rgb: [f32; 3]) -> [f32; 3] {
    let r = srgb_to_linear(rgb[0]);
    let g = srgb_to_linear(rgb[1]);
    let b = srgb_to_linear(rgb[2]);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175 * b;
    let z = 0.019_333_9 * r + 0.119_192 * g + 0.950_304_1 * b;
    let yr = y / WHITE_Y;
    let l = if yr > (6.0f32 / 29.0).powi(3) {
        116.0 * yr.cbrt() - 16.0
    } else {
        (29.0f32 / 3.0).powi(3) * yr
    };
    let denom = x + 15.0 * y + 3.0 * z;
    if denom <= 0.0 {
        return [l, 0.0, 0.0];
    }
    let wd = WHITE_X + 15.0 * WHITE_Y + 3.0 * WHITE_Z;
    let un = 4.0 * WHITE_X / wd;
    let vn = 9.0 * WHITE_Y / wd;
    let up = 4.0 * x / denom;
    let vp = 9.0 * y / denom;
    [l, 13.0 * l * (up - un), 13.0 * l * (vp - vn)]
}

/// Inverse of the rescaling applied by [`rgb_to_luv`].
pub fn unscale_luv(luv: [f32; 3]) -> [f32; 3] {
    [
        luv[0] / L_SCALE,
        luv[1] / UV_SCALE - U_OFFSET,
        luv[2] / UV_SCALE - V_OFFSET,
    ]
}

/// LUV planes rescaled to `[0, 1]`.
pub fn rgb_to_luv(image: &Image) -> [Plane; 3] {
    let (w, h) = (image.width, image.height);
    let mut planes = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    for y in 0..h {
        for x in 0..w {
            let [l, u, v] = srgb_to_cieluv(image.get(x, y));
            planes[0].set(x, y, l * L_SCALE);
            planes[1].set(x, y, (u + U_OFFSET) * UV_SCALE);
            planes[2].set(x, y, (v + V_OFFSET) * UV_SCALE);
        }
    }
    planes
}

/// Separable triangle filter of the given radius, replicated borders.
pub fn conv_tri(p: &Plane, radius: usize) -> Plane {
    if radius == 0 {
        return p.clone();
    }
    let r = radius as isize;
    let norm = ((radius + 1) * (radius + 1)) as f32;
    let kernel: Vec<f32> = (-r..=r).map(|j| (r + 1 - j.abs()) as f32 / norm).collect();
    let (w, h) = (p.width as isize, p.height as isize);
    let mut tmp = Plane::new(p.width, p.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let xx = (x + k as isize - r).clamp(0, w - 1);
                acc += wt * p.data[(y * w + xx) as usize];
            }
            tmp.data[(y * w + x) as usize] = acc;
        }
    }
    let mut out = Plane::new(p.width, p.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let yy = (y + k as isize - r).clamp(0, h - 1);
                acc += wt * tmp.data[(yy * w + x) as usize];
            }
            out.data[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Raw gradient magnitude and orientation in `[0, pi)` over a set of
/// color planes: per pixel the channel with the largest centered-difference
/// gradient wins.
pub fn gradient_planes(planes: &[Plane]) -> (Plane, Plane) {
    let (w, h) = (planes[0].width, planes[0].height);
    let mut mag = Plane::new(w, h);
    let mut ori = Plane::new(w, h);
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let mut best = -1.0f32;
            let mut best_g = (0.0f32, 0.0f32);
            for p in planes {
                let gx = 0.5 * (p.get(xp, y) - p.get(xm, y));
                let gy = 0.5 * (p.get(x, yp) - p.get(x, ym));
                let m2 = gx * gx + gy * gy;
                if m2 > best {
                    best = m2;
                    best_g = (gx, gy);
                }
            }
            mag.set(x, y, best.sqrt());
            let mut o = best_g.1.atan2(best_g.0);
            if o < 0.0 {
                o += PI;
            }
            if o >= PI {
                o -= PI;
            }
            ori.set(x, y, o);
        }
    }
    (mag, ori)
}

/// `M / (conv_tri(M, 5) + eps)`.
pub fn normalize_magnitude(mag: &Plane) -> Plane {
    let smooth = conv_tri(mag, NORM_RADIUS);
    let mut out = mag.clone();
    for (o, s) in out.data.iter_mut().zip(&smooth.data) {
        *o /= s + NORM_EPS;
    }
    out
}

/// Normalized gradient magnitude and orientation of an image, computed on
/// its pre-smoothed LUV planes.
pub fn gradients(image: &Image) -> (Plane, Plane) {
    let luv = smoothed_luv(image);
    let (m, o) = gradient_planes(&luv);
    (normalize_magnitude(&m), o)
}

fn smoothed_luv(image: &Image) -> [Plane; 3] {
    let [l, u, v] = rgb_to_luv(image);
    [
        conv_tri(&l, PRE_SMOOTH_RADIUS),
        conv_tri(&u, PRE_SMOOTH_RADIUS),
        conv_tri(&v, PRE_SMOOTH_RADIUS),
    ]
}

/// Soft-bin magnitudes into `bins` orientation planes. Bin `b` is centered
/// at `(b + 0.5) * pi / bins`; interpolation wraps around at `pi`.
pub fn orientation_histogram(mag: &Plane, orient: &Plane, bins: usize) -> Vec<Plane> {
    assert_eq!(mag.data.len(), orient.data.len());
    let mut out = vec![Plane::new(mag.width, mag.height); bins];
    let bin_width = PI / bins as f32;
    for (i, (&m, &o)) in mag.data.iter().zip(&orient.data).enumerate() {
        if m == 0.0 {
            continue;
        }
        let pos = o / bin_width - 0.5;
        let b0 = pos.floor();
        let frac = pos - b0;
        let lo = (b0 as isize).rem_euclid(bins as isize) as usize;
        let hi = (lo + 1) % bins;
        // keep the two shares summing exactly to m
        let share_hi = m * frac;
        out[lo].data[i] += m - share_hi;
        out[hi].data[i] += share_hi;
    }
    out
}

/// Non-overlapping `block x block` sums; partial border blocks are summed
/// as they are. Output is `ceil(w/block) x ceil(h/block)`.
pub fn aggregate(plane: &Plane, block: usize) -> Plane {
    assert!(block >= 1);
    if block == 1 {
        return plane.clone();
    }
    let ow = plane.width.div_ceil(block);
    let oh = plane.height.div_ceil(block);
    let mut out = Plane::new(ow, oh);
    for y in 0..plane.height {
        let oy = y / block;
        for x in 0..plane.width {
            out.data[oy * ow + x / block] += plane.get(x, y);
        }
    }
    out
}

/// The ten full-resolution channel planes of an image, in stack order.
pub fn compute_channels(image: &Image) -> Vec<Plane> {
    let luv = smoothed_luv(image);
    let (m, o) = gradient_planes(&luv);
    let m = normalize_magnitude(&m);
    let hist = orientation_histogram(&m, &o, N_ORIENTS);
    let mut out = Vec::with_capacity(N_CHANNELS);
    out.extend(luv);
    out.push(m);
    out.extend(hist);
    out
}

/// Aggregated channels at one scale. Planes are stored channel-major:
/// index `c * width * height + y * width + x`, in cell units.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    /// Nominal pyramid scale.
    pub scale: f64,
    /// Realized scale along each axis (level pixels / image pixels).
    pub scale_x: f64,
    pub scale_y: f64,
    /// Border cells added on each side; cell `(pad_x, pad_y)` is the level's
    /// top-left image cell.
    pub pad_x: usize,
    pub pad_y: usize,
}

/// A window on a [`ChannelStack`], in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellWindow {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl ChannelStack {
    pub fn from_image(image: &Image) -> ChannelStack {
        Self::from_image_at(image, 1.0, 1.0, 1.0)
    }

    fn from_image_at(image: &Image, scale: f64, scale_x: f64, scale_y: f64) -> ChannelStack {
        let planes = compute_channels(image);
        let agg: Vec<Plane> = planes.iter().map(|p| aggregate(p, CELL)).collect();
        let (w, h) = (agg[0].width, agg[0].height);
        let mut data = Vec::with_capacity(N_CHANNELS * w * h);
        for p in &agg {
            data.extend_from_slice(&p.data);
        }
        ChannelStack {
            width: w,
            height: h,
            data,
            scale,
            scale_x,
            scale_y,
            pad_x: 0,
            pad_y: 0,
        }
    }

    /// Adds `px`, `py` border cells per side: color channels replicate the
    /// edge, gradient channels are zero.
    pub fn padded(&self, px: usize, py: usize) -> ChannelStack {
        if px == 0 && py == 0 {
            return self.clone();
        }
        let (w, h) = (self.width + 2 * px, self.height + 2 * py);
        let mut data = vec![0.0f32; N_CHANNELS * w * h];
        for c in 0..N_CHANNELS {
            for y in 0..h {
                for x in 0..w {
                    let inside = x >= px && x < px + self.width && y >= py && y < py + self.height;
                    let v = if inside {
                        self.get(c, x - px, y - py)
                    } else if c < 3 {
                        let sx = x.saturating_sub(px).min(self.width - 1);
                        let sy = y.saturating_sub(py).min(self.height - 1);
                        self.get(c, sx, sy)
                    } else {
                        0.0
                    };
                    data[(c * h + y) * w + x] = v;
                }
            }
        }
        ChannelStack {
            width: w,
            height: h,
            data,
            pad_x: self.pad_x + px,
            pad_y: self.pad_y + py,
            ..*self
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Feature vector of a window: channel-major, then row, then column.
    pub fn extract_window(&self, win: CellWindow) -> Result<Vec<f32>> {
        if win.w == 0 || win.h == 0 || win.x + win.w > self.width || win.y + win.h > self.height {
            return Err(Error::Range(format!(
                "window {win:?} outside {}x{} stack",
                self.width, self.height
            )));
        }
        let mut v = Vec::with_capacity(N_CHANNELS * win.w * win.h);
        for c in 0..N_CHANNELS {
            for y in win.y..win.y + win.h {
                let base = (c * self.height + y) * self.width;
                v.extend_from_slice(&self.data[base + win.x..base + win.x + win.w]);
            }
        }
        Ok(v)
    }

    /// Resample every plane to `w x h` cells and scale channel `c` by
    /// `factors[c]`.
    fn resampled(&self, w: usize, h: usize, factors: &[f32; N_CHANNELS]) -> Vec<f32> {
        let mut data = Vec::with_capacity(N_CHANNELS * w * h);
        for (c, f) in factors.iter().enumerate() {
            let r = resample(self.plane(c), self.width, self.height, 1, w, h);
            data.extend(r.into_iter().map(|v| v * f));
        }
        data
    }

    /// Debug dump: a text header line `"W H C scale"` followed by
    /// little-endian `f32` values in stack order.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = format!("{} {} {} {}\n", self.width, self.height, N_CHANNELS, self.scale)
            .into_bytes();
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_dump(path: &Path) -> Result<ChannelStack> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(f);
        let mut header = String::new();
        r.read_line(&mut header).map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad = || Error::invalid(format!("{}: malformed channel dump header", path.display()));
        if fields.len() != 4 {
            return Err(bad());
        }
        let w: usize = fields[0].parse().map_err(|_| bad())?;
        let h: usize = fields[1].parse().map_err(|_| bad())?;
        let c: usize = fields[2].parse().map_err(|_| bad())?;
        let scale: f64 = fields[3].parse().map_err(|_| bad())?;
        if c != N_CHANNELS {
            return Err(bad());
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != 4 * w * h * c {
            return Err(bad());
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(ChannelStack {
            width: w,
            height: h,
            data,
            scale,
            scale_x: scale,
            scale_y: scale,
            pad_x: 0,
            pad_y: 0,
        })
    }
}

/// Default power-law exponents: color channels are scale invariant, gradient
/// channels decay slowly with downsampling.
pub const DEFAULT_LAMBDAS: [f64; N_CHANNELS] =
    [0.0, 0.0, 0.0, 0.11, 0.11, 0.11, 0.11, 0.11, 0.11, 0.11];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub scales_per_octave: usize,
    /// Approximated scales between consecutive real computations.
    pub n_approx_per_real: usize,
    pub lambdas: [f64; N_CHANNELS],
    /// Smallest window (pixels) that must fit inside a padded level.
    pub min_window: (usize, usize),
    /// Border cells added around every level, horizontally and vertically,
    /// so windows can hang over the image edge.
    #[serde(default)]
    pub pad: (usize, usize),
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            scales_per_octave: 8,
            n_approx_per_real: 7,
            lambdas: DEFAULT_LAMBDAS,
            min_window: (36, 16),
            pad: (3, 2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChannelPyramid {
    pub levels: Vec<ChannelStack>,
    pub scales: Vec<f64>,
    pub lambdas: [f64; N_CHANNELS],
    pub image_width: usize,
    pub image_height: usize,
}

fn level_pixels(n: usize, s: f64) -> usize {
    ((n as f64 * s).round() as usize).max(1)
}

/// Channel pyramid over scales `2^(-i / scales_per_octave)`, computing
/// channels exactly every `n_approx_per_real + 1` levels and approximating
/// the rest from the nearest real level with a per-channel power law.
pub fn build_pyramid(image: &Image, cfg: &PyramidConfig) -> Result<ChannelPyramid> {
    if cfg.scales_per_octave == 0 {
        return Err(Error::Config("scales_per_octave must be at least 1".into()));
    }
    let (w, h) = (image.width, image.height);
    let (mw, mh) = cfg.min_window;
    let mut scales = Vec::new();
    for i in 0.. {
        let s = 2f64.powf(-(i as f64) / cfg.scales_per_octave as f64);
        if level_pixels(w, s) + 2 * CELL * cfg.pad.0 < mw || level_pixels(h, s) + 2 * CELL * cfg.pad.1 < mh {
            break;
        }
        scales.push(s);
    }
    let step = cfg.n_approx_per_real + 1;
    let real_idx: Vec<usize> = (0..scales.len()).step_by(step).collect();
    let reals: Vec<ChannelStack> = real_idx
        .par_iter()
        .map(|&i| {
            let s = scales[i];
            let (lw, lh) = (level_pixels(w, s), level_pixels(h, s));
            let img = if i == 0 { image.clone() } else { image.resize(lw, lh) };
            ChannelStack::from_image_at(&img, s, lw as f64 / w as f64, lh as f64 / h as f64)
        })
        .collect();

    let levels: Vec<ChannelStack> = (0..scales.len())
        .into_par_iter()
        .map(|i| {
            if i % step == 0 {
                return reals[i / step].clone();
            }
            // nearest real level in log-scale; the coarser one only if it exists
            let below = i / step;
            let above = below + 1;
            let r = if above < reals.len() && (above * step - i) < (i - below * step) {
                above
            } else {
                below
            };
            let real = &reals[r];
            let s = scales[i];
            let (lw, lh) = (level_pixels(w, s), level_pixels(h, s));
            let (cw, ch) = (lw.div_ceil(CELL), lh.div_ceil(CELL));
            let ratio = s / real.scale;
            let mut factors = [1.0f32; N_CHANNELS];
            for (f, l) in factors.iter_mut().zip(&cfg.lambdas) {
                *f = ratio.powf(-l) as f32;
            }
            ChannelStack {
                width: cw,
                height: ch,
                data: real.resampled(cw, ch, &factors),
                scale: s,
                scale_x: lw as f64 / w as f64,
                scale_y: lh as f64 / h as f64,
                pad_x: 0,
                pad_y: 0,
            }
        })
        .collect();
    let levels: Vec<ChannelStack> = levels.into_par_iter().map(|l| l.padded(cfg.pad.0, cfg.pad.1)).collect();

    Ok(ChannelPyramid {
        levels,
        scales,
        lambdas: cfg.lambdas,
        image_width: w,
        image_height: h,
    })
}

/// Fit per-channel power-law exponents from how mean channel energy decays
/// over one octave of downsampling. Channels whose fit degenerates fall
/// back to 0.
pub fn estimate_lambdas(images: &[Image], scales_per_octave: usize) -> [f64; N_CHANNELS] {
    if images.len() < 10 {
        log::warn!(
            "estimating channel exponents from {} image(s); at least 10 recommended",
            images.len()
        );
    }
    let n_s = scales_per_octave.max(1);
    let log_s: Vec<f64> = (1..=n_s)
        .map(|k| -(k as f64) / n_s as f64 * std::f64::consts::LN_2)
        .collect();
    let per_image: Vec<Option<Vec<[f64; N_CHANNELS]>>> = images
        .par_iter()
        .map(|img| {
            let base = mean_energy(img);
            let mut ratios = Vec::with_capacity(n_s);
            for ls in &log_s {
                let s = ls.exp();
                let (lw, lh) = (level_pixels(img.width, s), level_pixels(img.height, s));
                if lw < 8 || lh < 8 {
                    return None;
                }
                let e = mean_energy(&img.resize(lw, lh));
                let mut r = [f64::NAN; N_CHANNELS];
                for c in 0..N_CHANNELS {
                    if base[c] > 1e-12 {
                        r[c] = e[c] / base[c];
                    }
                }
                ratios.push(r);
            }
            Some(ratios)
        })
        .collect();

    let mut lambdas = [0.0; N_CHANNELS];
    for (c, lambda) in lambdas.iter_mut().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for (k, ls) in log_s.iter().enumerate() {
            let vals: Vec<f64> = per_image
                .iter()
                .flatten()
                .map(|r| r[k][c])
                .filter(|v| v.is_finite() && *v > 0.0)
                .collect();
            if vals.is_empty() {
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            num += mean.ln() * ls;
            den += ls * ls;
        }
        let l = if den > 0.0 { -num / den } else { f64::NAN };
        if l.is_finite() {
            *lambda = l;
        } else {
            log::warn!("degenerate exponent fit for channel {c}; using 0");
        }
    }
    lambdas
}

/// Mean per-pixel value of each channel.
fn mean_energy(img: &Image) -> [f64; N_CHANNELS] {
    let planes = compute_channels(img);
    let n = (img.width * img.height) as f64;
    let mut out = [0.0; N_CHANNELS];
    for (o, p) in out.iter_mut().zip(&planes) {
        *o = p.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    }
    out
}
