//! Sub-sequence sampling and augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceRecord;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, SearchRegion};
use crate::grid::FeatureGrid;
use crate::image::Frame;
use crate::model::PivotModel;
use crate::training::labels::LabelPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Maximum center shift of reference crops, in units of `sqrt(w * h)`.
    pub ref_translate: f64,
    /// Maximum center shift of the current-frame crop.
    pub cur_translate: f64,
    /// Crop side is scaled by `exp(u)`, `u` uniform in `[-scale, scale]`.
    pub scale: f64,
    pub flip_probability: f64,
    /// Per-channel gain is drawn from `[1 - color_jitter, 1 + color_jitter]`.
    pub color_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { ref_translate: 0.25, cur_translate: 0.8, scale: 0.2, flip_probability: 0.5, color_jitter: 0.1 }
    }
}

/// Three distinct frame indices `[ref1, ref2, cur]` inside one window of at
/// most `window` frames. `None` for sequences shorter than three frames.
pub fn sample_subsequence(len: usize, window: usize, rng: &mut impl Rng) -> Option<[usize; 3]> {
    if len < 3 || window < 3 {
        if len < 3 {
            log::warn!("skipping a {len}-frame sequence: at least 3 frames are needed");
        }
        return None;
    }
    let span = window.min(len);
    let start = rng.gen_range(0..=len - span);
    let picks = rand::seq::index::sample(rng, span, 3);
    Some([start + picks.index(0), start + picks.index(1), start + picks.index(2)])
}

/// One training example: backbone features (before the adapter) and labels.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub refs: [(FeatureGrid, LabelPair); 2],
    pub templates: [FeatureGrid; 2],
    pub cur: FeatureGrid,
    pub label: LabelPair,
}

fn flip_box(b: &BoundingBox, width: usize) -> BoundingBox {
    BoundingBox { x: width as f64 - b.x - b.w, ..*b }
}

fn jittered_region<R: Rng + ?Sized>(
    model: &PivotModel,
    b: &BoundingBox,
    translate: f64,
    aug: &AugmentConfig,
    rng: &mut R,
) -> Result<SearchRegion> {
    let size = (b.w * b.h).sqrt();
    let (cx, cy) = b.center();
    let dx = rng.gen_range(-1.0..=1.0) * translate * size;
    let dy = rng.gen_range(-1.0..=1.0) * translate * size;
    let s = if aug.scale > 0.0 { rng.gen_range(-aug.scale..=aug.scale).exp() } else { 1.0 };
    SearchRegion::new(cx + dx, cy + dy, model.config.scale_factor * size * s, model.resolution())
}

/// Builds a sample from frames `idx` of `seq`: a shared flip and color
/// jitter for the triple, independent crop jitter per frame.
pub fn build_sample<R: Rng>(
    model: &PivotModel,
    seq: &SequenceRecord,
    idx: [usize; 3],
    aug: &AugmentConfig,
    rng: &mut R,
) -> Result<TrainingSample> {
    for &i in &idx {
        if !seq.visible[i] || !seq.boxes[i].is_valid() {
            return Err(Error::Precondition(format!("{}: frame {i} has no visible target", seq.name)));
        }
    }
    let flip = rng.gen_bool(aug.flip_probability.clamp(0.0, 1.0));
    let gains: [f32; 3] = std::array::from_fn(|_| {
        if aug.color_jitter > 0.0 {
            rng.gen_range(1.0 - aug.color_jitter..=1.0 + aug.color_jitter) as f32
        } else {
            1.0
        }
    });
    let mut frames: Vec<(Frame, BoundingBox)> = Vec::with_capacity(3);
    for &i in &idx {
        let mut f = seq.frame(i)?;
        let mut b = seq.boxes[i];
        if flip {
            f = f.flip_horizontal();
            b = flip_box(&b, f.width);
        }
        if gains != [1.0; 3] {
            f = f.scale_channels(gains);
        }
        frames.push((f, b));
    }
    let crop = |k: usize, translate: f64, rng: &mut R| -> Result<(FeatureGrid, LabelPair)> {
        let (f, b) = &frames[k];
        let region = jittered_region(model, b, translate, aug, rng)?;
        let raw = model.backbone.encode(&f.crop_region(&region))?;
        Ok((raw, model.label(b, &region)))
    };
    let r1 = crop(0, aug.ref_translate, rng)?;
    let r2 = crop(1, aug.ref_translate, rng)?;
    let (cur, label) = crop(2, aug.cur_translate, rng)?;
    let res = model.resolution();
    let t1 = model.backbone.encode(&frames[0].0.crop_box(&frames[0].1, res)?)?;
    let t2 = model.backbone.encode(&frames[1].0.crop_box(&frames[1].1, res)?)?;
    Ok(TrainingSample { refs: [r1, r2], templates: [t1, t2], cur, label })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn indices_distinct_and_in_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let [a, b, c] = sample_subsequence(1000, 200, &mut rng).unwrap();
            assert!(a != b && b != c && a != c);
            let lo = a.min(b).min(c);
            let hi = a.max(b).max(c);
            assert!(hi - lo <= 199 && hi < 1000);
        }
    }

    #[test]
    fn short_sequences_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_subsequence(2, 200, &mut rng).is_none());
        let t = sample_subsequence(3, 200, &mut rng).unwrap();
        let mut s = t.to_vec();
        s.sort();
        assert_eq!(s, vec![0, 1, 2]);
    }

    #[test]
    fn seeded_reproducible() {
        let a: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| sample_subsequence(500, 200, &mut rng)).collect()
        };
        let b: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| sample_subsequence(500, 200, &mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn window_coverage_is_uniform() {
        // 10k triples over a 200-frame sequence, 20 bins of 10 frames;
        // chi-square with 19 dof, 0.999 quantile is 43.82
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bins = [0usize; 20];
        for _ in 0..10_000 {
            for i in sample_subsequence(200, 200, &mut rng).unwrap() {
                bins[i / 10] += 1;
            }
        }
        let expected = 30_000.0 / 20.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }

    #[test]
    fn flip_box_mirrors() {
        let b = BoundingBox::new(10.0, 5.0, 20.0, 8.0).unwrap();
        let f = flip_box(&b, 100);
        assert_eq!(f.x, 70.0);
        assert_eq!(flip_box(&f, 100), b);
    }
}
