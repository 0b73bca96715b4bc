//! Minimal RGB frame type with the resampling the tracker needs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, SearchRegion};

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut f = Self::new(width, height);
        for px in f.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        f
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut out = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                out.put(x, y, f(x, y));
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous pixel coordinates (pixel `i` spans
    /// `[i, i + 1)` with its center at `i + 0.5`); out-of-frame positions
    /// replicate the nearest edge pixel.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] as f64 * (1.0 - ax) + p10[c] as f64 * ax;
            let bot = p01[c] as f64 * (1.0 - ax) + p11[c] as f64 * ax;
            out[c] = top * (1.0 - ay) + bot * ay;
        }
        out
    }

    /// Resamples the axis-aligned source rectangle `(x0, y0, w, h)` to an
    /// `out_w`×`out_h` frame. Downscaling averages a small grid of bilinear
    /// samples per output pixel.
    pub fn resample(&self, x0: f64, y0: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Frame {
        let sx = w / out_w as f64;
        let sy = h / out_h as f64;
        let kx = (sx.ceil() as usize).clamp(1, 4);
        let ky = (sy.ceil() as usize).clamp(1, 4);
        let norm = 1.0 / (kx * ky) as f64;
        let mut out = Frame::new(out_w, out_h);
        for v in 0..out_h {
            for u in 0..out_w {
                let mut acc = [0.0f64; 3];
                for j in 0..ky {
                    for i in 0..kx {
                        let px = x0 + (u as f64 + (i as f64 + 0.5) / kx as f64) * sx;
                        let py = y0 + (v as f64 + (j as f64 + 0.5) / ky as f64) * sy;
                        let s = self.sample(px, py);
                        for c in 0..3 {
                            acc[c] += s[c];
                        }
                    }
                }
                out.put(u, v, [(acc[0] * norm) as f32, (acc[1] * norm) as f32, (acc[2] * norm) as f32]);
            }
        }
        out
    }

    /// Crops the search region and resizes it to its model resolution.
    pub fn crop_region(&self, region: &SearchRegion) -> Frame {
        let (ox, oy) = region.origin();
        self.resample(ox, oy, region.side, region.side, region.resolution, region.resolution)
    }

    /// Crops exactly `b` (clipped to the frame) and resizes it to `out`×`out`.
    pub fn crop_box(&self, b: &BoundingBox, out: usize) -> Result<Frame> {
        let clipped = b
            .intersect_frame(self.width as f64, self.height as f64)
            .ok_or_else(|| Error::DegenerateCrop(format!("box {b:?} lies outside the frame")))?;
        if clipped.w < 1.0 || clipped.h < 1.0 {
            return Err(Error::DegenerateCrop(format!("box {b:?} is smaller than one pixel inside the frame")));
        }
        Ok(self.resample(clipped.x, clipped.y, clipped.w, clipped.h, out, out))
    }

    pub fn flip_horizontal(&self) -> Frame {
        Frame::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Multiplies each channel by its factor, clamping to `[0, 1]`.
    pub fn scale_channels(&self, factors: [f32; 3]) -> Frame {
        let mut out = self.clone();
        for px in out.data.chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = (px[c] * factors[c]).clamp(0.0, 1.0);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let buf = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer size matches")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Frame {
        Frame {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Frame> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Quantizes to 8 bits and back, matching what a PNG round trip yields.
    pub fn quantized(&self) -> Frame {
        Self::from_rgb8(&self.to_rgb8())
    }
}
