//! RGB images with values in `[0, 1]`, single-channel planes, resampling,
//! and PNG / binary PPM / PGM input.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major interleaved RGB, each value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

/// A single row-major channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Plane {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn resample(&self, width: usize, height: usize) -> Plane {
        Plane {
            width,
            height,
            data: resample(&self.data, self.width, self.height, 1, width, height),
        }
    }

    pub fn flip_horizontal(&self) -> Plane {
        let mut out = Plane::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }
}

impl Image {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1"));
        }
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1"));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: width * height * 3,
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Range("pixel values must lie in [0, 1]".into()));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn resize(&self, width: usize, height: usize) -> Image {
        Image {
            width,
            height,
            pixels: resample(&self.pixels, self.width, self.height, 3, width, height),
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Crop `[x0, x0+w) x [y0, y0+h)` (possibly extending past the border;
    /// outside pixels replicate the nearest edge) and resample the crop to
    /// `out_w x out_h`. Coordinates are fractional.
    pub fn crop_resize(&self, x0: f64, y0: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Image {
        let mut out = Image {
            width: out_w,
            height: out_h,
            pixels: vec![0.0; out_w * out_h * 3],
        };
        let sx = w / out_w as f64;
        let sy = h / out_h as f64;
        // Box-filter footprint when shrinking, bilinear when enlarging.
        let kx = (sx.max(1.0).ceil() as usize).max(1);
        let ky = (sy.max(1.0).ceil() as usize).max(1);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = [0.0f64; 3];
                let mut n = 0.0;
                for jy in 0..ky {
                    for jx in 0..kx {
                        let fx = x0 + sx * (ox as f64 + (jx as f64 + 0.5) / kx as f64) - 0.5;
                        let fy = y0 + sy * (oy as f64 + (jy as f64 + 0.5) / ky as f64) - 0.5;
                        let p = self.bilinear(fx, fy);
                        for c in 0..3 {
                            acc[c] += p[c] as f64;
                        }
                        n += 1.0;
                    }
                }
                out.set(
                    ox,
                    oy,
                    [
                        (acc[0] / n) as f32,
                        (acc[1] / n) as f32,
                        (acc[2] / n) as f32,
                    ],
                );
            }
        }
        out
    }

    fn bilinear(&self, fx: f64, fy: f64) -> [f32; 3] {
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = (fx - x0 as f64) as f32;
        let ay = (fy - y0 as f64) as f32;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut r = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + ax * (p10[c] - p00[c]);
            let bot = p01[c] + ax * (p11[c] - p01[c]);
            r[c] = top + ay * (bot - top);
        }
        r
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image::from_pixels(w as usize, h as usize, pixels)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Write as PNG, or binary PPM when the extension is `.ppm`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

/// 1-D resampling weights: `(first_src_index, weights)` per output sample.
/// Area averaging when shrinking, linear interpolation otherwise.
fn resample_weights(n_in: usize, n_out: usize) -> Vec<(usize, Vec<f32>)> {
    let mut table = Vec::with_capacity(n_out);
    if n_out == n_in {
        for i in 0..n_out {
            table.push((i, vec![1.0]));
        }
    } else if n_out < n_in {
        let r = n_in as f64 / n_out as f64;
        for i in 0..n_out {
            let a = i as f64 * r;
            let b = (i as f64 + 1.0) * r;
            let first = a.floor() as usize;
            let last = (b.ceil() as usize).min(n_in);
            let mut w = Vec::with_capacity(last - first);
            for j in first..last {
                let lo = a.max(j as f64);
                let hi = b.min(j as f64 + 1.0);
                w.push(((hi - lo).max(0.0) / r) as f32);
            }
            table.push((first, w));
        }
    } else {
        let r = n_in as f64 / n_out as f64;
        for i in 0..n_out {
            let x = ((i as f64 + 0.5) * r - 0.5).clamp(0.0, (n_in - 1) as f64);
            let x0 = x.floor() as usize;
            let t = (x - x0 as f64) as f32;
            if x0 + 1 < n_in {
                table.push((x0, vec![1.0 - t, t]));
            } else {
                table.push((x0, vec![1.0]));
            }
        }
    }
    table
}

/// Separable resampling of an interleaved `channels`-plane buffer.
pub fn resample(
    src: &[f32],
    w: usize,
    h: usize,
    channels: usize,
    nw: usize,
    nh: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), w * h * channels);
    if w == nw && h == nh {
        return src.to_vec();
    }
    let wx = resample_weights(w, nw);
    let wy = resample_weights(h, nh);
    // horizontal pass: h rows x nw
    let mut tmp = vec![0.0f32; h * nw * channels];
    for y in 0..h {
        let row = &src[y * w * channels..(y + 1) * w * channels];
        let out = &mut tmp[y * nw * channels..(y + 1) * nw * channels];
        for (ox, (first, ws)) in wx.iter().enumerate() {
            for c in 0..channels {
                let mut acc = 0.0f32;
                for (k, wt) in ws.iter().enumerate() {
                    acc += wt * row[(first + k) * channels + c];
                }
                out[ox * channels + c] = acc;
            }
        }
    }
    let mut dst = vec![0.0f32; nh * nw * channels];
    for (oy, (first, ws)) in wy.iter().enumerate() {
        let out = &mut dst[oy * nw * channels..(oy + 1) * nw * channels];
        for (k, wt) in ws.iter().enumerate() {
            let row = &tmp[(first + k) * nw * channels..(first + k + 1) * nw * channels];
            for (o, r) in out.iter_mut().zip(row) {
                *o += wt * r;
            }
        }
    }
    dst
}
