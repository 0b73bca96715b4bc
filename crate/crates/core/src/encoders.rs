//! Frame and RoI encoders.
//!
//! Two narrow interfaces keep the rest of the tracker independent of which
//! encoder is plugged in: [`FrameBackbone`] turns a square model-input patch
//! into a [`FeatureGrid`], and [`RoiEmbedder`] turns an arbitrary crop into a
//! unit-norm [`EmbeddingVector`]. The toy implementations below are
//! deterministic and need no pretrained weights; foundation encoders can be
//! slotted in behind the same traits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::geometry::BoundingBox;
use crate::grid::FeatureGrid;
use crate::image::Frame;
use crate::nn::Linear;
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEncoderSpec {
    pub name: String,
    /// Side of the square model-input patch, in pixels.
    pub input_resolution: usize,
    /// Backbone grid before optional pooling.
    pub grid: usize,
    pub channels: usize,
    pub trainable_adapter: bool,
    /// Target side for adaptive average pooling of the backbone grid.
    #[serde(default)]
    pub pool_to: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl FrameEncoderSpec {
    /// Desk-scale toy backbone: 96 px patches, 8 px cells, 32 channels.
    pub fn toy() -> Self {
        Self {
            name: "toy".into(),
            input_resolution: 96,
            grid: 12,
            channels: 32,
            trainable_adapter: true,
            pool_to: None,
            seed: 0x5eed,
        }
    }

    /// Side of the grid handed to the rest of the tracker.
    pub fn output_grid(&self) -> usize {
        self.pool_to.unwrap_or(self.grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.channels == 0 || self.input_resolution < self.grid {
            return Err(Error::Config(format!("encoder `{}`: grid, channels and resolution must be positive", self.name)));
        }
        if let Some(p) = self.pool_to {
            if p == 0 || p > self.grid {
                return Err(Error::Config(format!(
                    "encoder `{}`: pool_to {p} must be in 1..={}",
                    self.name, self.grid
                )));
            }
        }
        Ok(())
    }
}

/// Frozen feature extractor; carries no mutable state.
pub trait FrameBackbone: Send + Sync {
    fn spec(&self) -> &FrameEncoderSpec;

    /// Backbone features of a `input_resolution`² patch, after pooling.
    fn encode(&self, patch: &Frame) -> Result<FeatureGrid>;
}

/// Adaptive average pooling with the usual window rule: output cell `i`
/// averages input rows `floor(i*H/H') .. ceil((i+1)*H/H')`.
pub fn adaptive_avg_pool(g: &FeatureGrid, out_h: usize, out_w: usize) -> Result<FeatureGrid> {
    if out_h == 0 || out_w == 0 || out_h > g.h || out_w > g.w {
        return shape_err(format!("cannot pool {}x{} to {out_h}x{out_w}", g.h, g.w));
    }
    let mut values = vec![0.0; out_h * out_w * g.c];
    for oi in 0..out_h {
        let r0 = oi * g.h / out_h;
        let r1 = ((oi + 1) * g.h).div_ceil(out_h);
        for oj in 0..out_w {
            let c0 = oj * g.w / out_w;
            let c1 = ((oj + 1) * g.w).div_ceil(out_w);
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            let dst = (oi * out_w + oj) * g.c;
            for r in r0..r1 {
                for c in c0..c1 {
                    let src = (r * g.w + c) * g.c;
                    for k in 0..g.c {
                        values[dst + k] += g.values[src + k];
                    }
                }
            }
            for v in &mut values[dst..dst + g.c] {
                *v /= n;
            }
        }
    }
    let stride = g.stride * g.h as f64 / out_h as f64;
    FeatureGrid::new(out_h, out_w, g.c, stride, values)
}

/// Per-cell local statistics: mean RGB, mean luminance-gradient magnitude,
/// and fixed random projections of the cell's mean-removed 4×4 thumbnail.
#[derive(Debug, Clone)]
pub struct ToyFrameEncoder {
    spec: FrameEncoderSpec,
    projections: Vec<f64>,
}

const THUMB: usize = 4;
const THUMB_DIM: usize = THUMB * THUMB * 3;

impl ToyFrameEncoder {
    pub fn new(spec: FrameEncoderSpec) -> Result<Self> {
        spec.validate()?;
        if spec.channels < 5 {
            return Err(Error::Config("toy encoder needs at least 5 channels".into()));
        }
        if spec.input_resolution % spec.grid != 0 {
            return Err(Error::Config(format!(
                "toy encoder: resolution {} is not a multiple of grid {}",
                spec.input_resolution, spec.grid
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let k = spec.channels - 4;
        let scale = 2.0 / (THUMB_DIM as f64).sqrt();
        let projections = (0..k * THUMB_DIM)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Ok(Self { spec, projections })
    }
}

fn luminance(p: [f32; 3]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

impl FrameBackbone for ToyFrameEncoder {
    fn spec(&self) -> &FrameEncoderSpec {
        &self.spec
    }

    fn encode(&self, patch: &Frame) -> Result<FeatureGrid> {
        let res = self.spec.input_resolution;
        if patch.width != res || patch.height != res {
            return shape_err(format!(
                "encoder `{}` expects {res}x{res} patches, got {}x{}",
                self.spec.name, patch.width, patch.height
            ));
        }
        let g = self.spec.grid;
        let s = res / g;
        let c = self.spec.channels;
        let k = c - 4;

        let lum: Vec<f64> = patch.data.chunks_exact(3).map(|p| luminance([p[0], p[1], p[2]])).collect();
        let at = |x: isize, y: isize| {
            let x = x.clamp(0, res as isize - 1) as usize;
            let y = y.clamp(0, res as isize - 1) as usize;
            lum[y * res + x]
        };

        let mut values = vec![0.0; g * g * c];
        let mut thumb = [0.0f64; THUMB_DIM];
        for gi in 0..g {
            for gj in 0..g {
                let out = &mut values[(gi * g + gj) * c..(gi * g + gj + 1) * c];
                let mut mean = [0.0f64; 3];
                let mut grad = 0.0;
                thumb.fill(0.0);
                for y in gi * s..(gi + 1) * s {
                    for x in gj * s..(gj + 1) * s {
                        let px = patch.get(x, y);
                        let ty = (y - gi * s) * THUMB / s;
                        let tx = (x - gj * s) * THUMB / s;
                        for ch in 0..3 {
                            mean[ch] += px[ch] as f64;
                            thumb[(ty * THUMB + tx) * 3 + ch] += px[ch] as f64;
                        }
                        let (xi, yi) = (x as isize, y as isize);
                        let gx = at(xi + 1, yi) - at(xi - 1, yi);
                        let gy = at(xi, yi + 1) - at(xi, yi - 1);
                        grad += 0.5 * (gx * gx + gy * gy).sqrt();
                    }
                }
                let n = (s * s) as f64;
                let per_thumb = n / (THUMB * THUMB) as f64;
                for ch in 0..3 {
                    mean[ch] /= n;
                    out[ch] = mean[ch];
                }
                out[3] = grad / n;
                for (i, t) in thumb.iter_mut().enumerate() {
                    *t = *t / per_thumb - mean[i % 3];
                }
                for (j, o) in out[4..4 + k].iter_mut().enumerate() {
                    let row = &self.projections[j * THUMB_DIM..(j + 1) * THUMB_DIM];
                    *o = row.iter().zip(thumb.iter()).map(|(a, b)| a * b).sum();
                }
            }
        }
        let grid = FeatureGrid::new(g, g, c, s as f64, values)?;
        match self.spec.pool_to {
            Some(p) if p != g => adaptive_avg_pool(&grid, p, p),
            _ => Ok(grid),
        }
    }
}

/// Learned single-layer adapter applied to every backbone output.
#[derive(Debug, Clone, Copy)]
pub struct Adapter {
    pub lin: Linear,
}

impl Adapter {
    pub fn apply(&self, store: &ParamStore, g: &FeatureGrid) -> FeatureGrid {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(g.h * g.w, g.c, g.values.clone()));
        let y = self.lin.forward(&mut tape, store, x);
        FeatureGrid { values: tape.value(y).data.clone(), ..g.clone() }
    }
}

/// Backbone followed by the adapter.
pub fn encode_frame(backbone: &dyn FrameBackbone, adapter: &Adapter, store: &ParamStore, patch: &Frame) -> Result<FeatureGrid> {
    let raw = backbone.encode(patch)?;
    Ok(adapter.apply(store, &raw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source_box: Option<BoundingBox>,
}

impl EmbeddingVector {
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let na = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Image-level embedding used for template and candidate similarity.
pub trait RoiEmbedder: Send + Sync {
    /// Side of the square input the crop is resized to.
    fn input_resolution(&self) -> usize;

    fn dim(&self) -> usize;

    /// Embeds an already-resized crop.
    fn embed_patch(&self, patch: &Frame) -> Result<Vec<f64>>;
}

/// Crops `b` from `frame`, resizes it to the embedder's resolution and
/// returns the unit-norm embedding.
pub fn encode_roi(embedder: &dyn RoiEmbedder, frame: &Frame, b: &BoundingBox) -> Result<EmbeddingVector> {
    if !b.is_valid() {
        return Err(Error::DegenerateCrop(format!("invalid box {b:?}")));
    }
    let crop = frame.crop_box(b, embedder.input_resolution())?;
    let mut values = embedder.embed_patch(&crop)?;
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(Error::DegenerateCrop("crop produced a zero embedding".into()));
    }
    for v in &mut values {
        *v /= norm;
    }
    Ok(EmbeddingVector { values, source_box: Some(*b) })
}

/// Color histogram plus an edge-orientation shape descriptor.
///
/// The first 27 dimensions are a soft 3×3×3 joint RGB histogram, the next one
/// the mean gradient energy, and the last 36 a magnitude-weighted histogram
/// of unsigned luminance-gradient orientations (5° bins, soft-assigned over
/// neighboring bins). Orientations summarize the silhouette's outline and the
/// surface texture without depending on where in the crop they occur, so a
/// loosely fitting box still matches. Both histograms are mean-centered; the
/// color and shape parts are normalized separately and weighted 0.3 : 0.954.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    pub resolution: usize,
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        Self { resolution: 32 }
    }
}

const HIST_BINS: usize = 3;
const ORIENT_BINS: usize = 36;
pub const TOY_EMBED_DIM: usize = HIST_BINS * HIST_BINS * HIST_BINS + 1 + ORIENT_BINS;

fn tent(v: f64, center: f64) -> f64 {
    (1.0 - (v - center).abs() * (HIST_BINS - 1) as f64).max(0.0)
}

fn center_and_scale(v: &mut [f64], weight: f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-9 {
        v.iter_mut().for_each(|x| *x *= weight / n);
    } else {
        v.fill(0.0);
    }
}

impl RoiEmbedder for ToyEmbedder {
    fn input_resolution(&self) -> usize {
        self.resolution
    }

    fn dim(&self) -> usize {
        TOY_EMBED_DIM
    }

    fn embed_patch(&self, patch: &Frame) -> Result<Vec<f64>> {
        let (w, h) = (patch.width, patch.height);
        if w < 6 || h < 6 {
            return Err(Error::DegenerateCrop(format!("{w}x{h} patch is too small to embed")));
        }
        let nbins = HIST_BINS * HIST_BINS * HIST_BINS;
        let mut color = vec![0.0; nbins + 1];
        let mut lum = vec![0.0; w * h];
        let step = 1.0 / (HIST_BINS - 1) as f64;
        for y in 0..h {
            for x in 0..w {
                let p = patch.get(x, y);
                lum[y * w + x] = luminance(p);
                let wr: Vec<f64> = (0..HIST_BINS).map(|b| tent(p[0] as f64, b as f64 * step)).collect();
                let wg: Vec<f64> = (0..HIST_BINS).map(|b| tent(p[1] as f64, b as f64 * step)).collect();
                let wb: Vec<f64> = (0..HIST_BINS).map(|b| tent(p[2] as f64, b as f64 * step)).collect();
                for (i, r) in wr.iter().enumerate() {
                    for (j, g) in wg.iter().enumerate() {
                        for (k, b) in wb.iter().enumerate() {
                            color[(i * HIST_BINS + j) * HIST_BINS + k] += r * g * b;
                        }
                    }
                }
            }
        }
        let npx = (w * h) as f64;
        color.iter_mut().for_each(|v| *v /= npx);

        let mut orient = vec![0.0; ORIENT_BINS];
        let mut energy = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let gx = lum[y * w + x + 1] - lum[y * w + x - 1];
                let gy = lum[(y + 1) * w + x] - lum[(y - 1) * w + x];
                let mag = (gx * gx + gy * gy).sqrt();
                energy += mag;
                let mut a = gy.atan2(gx);
                if a < 0.0 {
                    a += std::f64::consts::PI;
                }
                let pos = a / std::f64::consts::PI * ORIENT_BINS as f64;
                for k in -2i64..=2 {
                    let bin = (pos.floor() as i64 + k).rem_euclid(ORIENT_BINS as i64) as usize;
                    let wgt = (1.0 - (pos - (pos.floor() + k as f64 + 0.5)).abs() / 2.5).max(0.0);
                    orient[bin] += mag * wgt;
                }
            }
        }
        color[nbins] = energy / npx;
        center_and_scale(&mut color[..nbins], 1.0);
        center_and_scale(&mut color, 0.3);
        center_and_scale(&mut orient, 0.954);
        color.extend(orient);
        Ok(color)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn constant_patch_gives_constant_grid() {
        let enc = ToyFrameEncoder::new(FrameEncoderSpec::toy()).unwrap();
        let g = enc.encode(&Frame::filled(96, 96, [0.3, 0.5, 0.7])).unwrap();
        let first = g.cell(crate::geometry::GridPoint::new(0, 0)).to_vec();
        for chunk in g.values.chunks_exact(g.c) {
            assert_eq!(chunk, first.as_slice());
        }
    }

    #[test]
    fn wrong_resolution_rejected() {
        let enc = ToyFrameEncoder::new(FrameEncoderSpec::toy()).unwrap();
        assert!(matches!(enc.encode(&Frame::new(64, 64)), Err(Error::Shape(_))));
    }

    #[test]
    fn pooling_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (h, c) = (27, 3);
        let g = FeatureGrid::new(h, h, c, 14.0, (0..h * h * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let p = adaptive_avg_pool(&g, 22, 22).unwrap();
        for oi in 0..22 {
            for oj in 0..22 {
                // window bounds computed with floating point floor/ceil
                let r0 = (oi as f64 * 27.0 / 22.0).floor() as usize;
                let r1 = ((oi + 1) as f64 * 27.0 / 22.0).ceil() as usize;
                let c0 = (oj as f64 * 27.0 / 22.0).floor() as usize;
                let c1 = ((oj + 1) as f64 * 27.0 / 22.0).ceil() as usize;
                for k in 0..c {
                    let mut s = 0.0;
                    for r in r0..r1 {
                        for cc in c0..c1 {
                            s += g.values[(r * h + cc) * c + k];
                        }
                    }
                    let want = s / ((r1 - r0) * (c1 - c0)) as f64;
                    assert!((p.values[(oi * 22 + oj) * c + k] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn even_pooling_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = FeatureGrid::new(24, 24, 2, 8.0, (0..24 * 24 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let p = adaptive_avg_pool(&g, 12, 12).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&g.values) - mean(&p.values)).abs() < 1e-6);
    }

    #[test]
    fn roi_embedding_is_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = Frame::from_fn(50, 40, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let e = encode_roi(&ToyEmbedder::default(), &f, &BoundingBox::new(5.0, 5.0, 20.0, 12.0).unwrap()).unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-6);
        assert!((e.cosine(&e) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_roi_rejected() {
        let f = Frame::new(20, 20);
        let b = BoundingBox { x: 25.0, y: 25.0, w: 3.0, h: 3.0 };
        assert!(encode_roi(&ToyEmbedder::default(), &f, &b).is_err());
    }
}
