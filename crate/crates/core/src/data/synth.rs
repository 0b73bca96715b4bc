//! Procedural scenes: textured flat-shaded shapes moving over a static
//! background, with optional look-alike distractors on crossing paths,
//! full occlusions and aspect-ratio deformation. Ground truth is exact.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FrameSource, SequenceRecord};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::image::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Diamond,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Diamond, ShapeKind::Triangle];

    /// Whether the point `(u, v)`, in box coordinates scaled to `[-1, 1]`,
    /// lies inside the shape.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            ShapeKind::Rectangle => u.abs() <= 1.0 && v.abs() <= 1.0,
            ShapeKind::Ellipse => u * u + v * v <= 1.0,
            ShapeKind::Diamond => u.abs() + v.abs() <= 1.0,
            ShapeKind::Triangle => v.abs() <= 1.0 && u.abs() <= (v + 1.0) / 2.0,
        }
    }

    fn next(self) -> Self {
        let i = Self::ALL.iter().position(|&s| s == self).unwrap();
        Self::ALL[(i + 1) % 4]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDesc {
    pub shape: ShapeKind,
    pub color: [f32; 3],
    pub width: f64,
    pub height: f64,
    /// Selects stripe orientation, period and phase.
    pub texture_seed: u64,
    pub texture_strength: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorDesc {
    /// 1.0 copies the target's shape, color and texture; 0.0 uses the
    /// inverted color and a different shape.
    pub similarity: f64,
    pub speed: f64,
    /// Frame at which the distractor's path meets the target's center.
    /// Without one it starts at a random spot away from the target.
    pub crossing: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionModel {
    /// Pixels per frame.
    pub speed: f64,
    /// Standard deviation of the per-frame heading change, radians.
    pub turn_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionEvent {
    pub start: usize,
    pub duration: usize,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformSpec {
    /// Relative change of width (and opposite change of height).
    pub amplitude: f64,
    /// Frames per full cycle.
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub target: ObjectDesc,
    /// Initial target center; random when absent.
    pub start: Option<(f64, f64)>,
    pub distractors: Vec<DistractorDesc>,
    pub motion: MotionModel,
    pub occlusions: Vec<OcclusionEvent>,
    pub deform: Option<DeformSpec>,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn object_count(&self) -> usize {
        1 + self.distractors.len()
    }

    fn max_extent(&self) -> (f64, f64) {
        let a = self.deform.map_or(0.0, |d| d.amplitude.abs());
        (self.target.width * (1.0 + a), self.target.height * (1.0 + a))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.length == 0 || self.width == 0 || self.height == 0 {
            return bad("canvas and length must be positive".into());
        }
        let t = &self.target;
        if !(t.width >= 2.0 && t.height >= 2.0) {
            return bad(format!("target {}x{} is too small", t.width, t.height));
        }
        let (mw, mh) = self.max_extent();
        if mw >= self.width as f64 || mh >= self.height as f64 {
            return bad(format!("object {mw:.1}x{mh:.1} does not fit a {}x{} canvas", self.width, self.height));
        }
        if let Some(d) = self.deform {
            if !(d.amplitude.abs() < 0.9) || !(d.period > 0.0) {
                return bad("deform amplitude must be below 0.9 and period positive".into());
            }
        }
        for d in &self.distractors {
            if !(0.0..=1.0).contains(&d.similarity) || !(d.speed >= 0.0) {
                return bad(format!("distractor similarity {} / speed {} out of range", d.similarity, d.speed));
            }
            if d.crossing.is_some_and(|c| c >= self.length) {
                return bad(format!("crossing frame {:?} beyond length {}", d.crossing, self.length));
            }
        }
        for o in &self.occlusions {
            if o.duration == 0 || o.start + o.duration > self.length {
                return bad(format!("occlusion {}+{} outside 0..{}", o.start, o.duration, self.length));
            }
        }
        if !(self.noise >= 0.0) || !(self.motion.speed >= 0.0) || !(self.motion.turn_rate >= 0.0) {
            return bad("noise, speed and turn rate must be non-negative".into());
        }
        Ok(())
    }
}

/// Folds `x` into `[lo, hi]` by reflecting at the walls.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

#[derive(Debug, Clone)]
struct Stripes {
    dir: (f64, f64),
    period: f64,
    phase: f64,
    strength: f64,
}

impl Stripes {
    fn new(seed: u64, strength: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: f64 = rng.gen_range(0.0..PI);
        Self {
            dir: (a.cos(), a.sin()),
            period: rng.gen_range(4.0..8.0),
            phase: rng.gen_range(0.0..2.0 * PI),
            strength: strength as f64,
        }
    }

    fn factor(&self, dx: f64, dy: f64) -> f64 {
        1.0 + self.strength * (2.0 * PI * (dx * self.dir.0 + dy * self.dir.1) / self.period + self.phase).sin()
    }
}

#[derive(Debug, Clone)]
struct Sprite {
    shape: ShapeKind,
    color: [f32; 3],
    stripes: Stripes,
}

impl Sprite {
    fn from_desc(d: &ObjectDesc) -> Self {
        Self { shape: d.shape, color: d.color, stripes: Stripes::new(d.texture_seed, d.texture_strength) }
    }

    fn draw(&self, frame: &mut Frame, b: &BoundingBox) {
        let (cx, cy) = b.center();
        let (hw, hh) = (b.w / 2.0, b.h / 2.0);
        let x0 = b.x.floor().max(0.0) as usize;
        let y0 = b.y.floor().max(0.0) as usize;
        let x1 = (b.right().ceil().max(0.0) as usize).min(frame.width);
        let y1 = (b.bottom().ceil().max(0.0) as usize).min(frame.height);
        for y in y0..y1 {
            for x in x0..x1 {
                // conservative coverage: the pixel's point nearest the center
                let nx = cx.clamp(x as f64, x as f64 + 1.0) - cx;
                let ny = cy.clamp(y as f64, y as f64 + 1.0) - cy;
                if self.shape.contains(nx / hw, ny / hh) {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    let f = self.stripes.factor(dx, dy) as f32;
                    let c = self.color;
                    frame.put(x, y, [(c[0] * f).clamp(0.0, 1.0), (c[1] * f).clamp(0.0, 1.0), (c[2] * f).clamp(0.0, 1.0)]);
                }
            }
        }
    }
}

/// A generated scene: spec, static background and per-frame object boxes.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SynthSpec,
    background: Frame,
    target_boxes: Vec<BoundingBox>,
    distractor_boxes: Vec<Vec<BoundingBox>>,
    sprites: Vec<Sprite>,
}

impl SynthScene {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let background = render_background(spec.width, spec.height, &mut rng);
        let (cw, ch) = (spec.width as f64, spec.height as f64);
        let (mw, mh) = spec.max_extent();
        let (lo_x, hi_x) = (mw / 2.0, cw - mw / 2.0);
        let (lo_y, hi_y) = (mh / 2.0, ch - mh / 2.0);

        let (mut px, mut py) = spec
            .start
            .unwrap_or_else(|| (rng.gen_range(lo_x..=hi_x), rng.gen_range(lo_y..=hi_y)));
        let mut heading: f64 = rng.gen_range(0.0..2.0 * PI);
        let turn = Normal::new(0.0, spec.motion.turn_rate.max(1e-12)).unwrap();
        let mut centers = Vec::with_capacity(spec.length);
        let mut headings = Vec::with_capacity(spec.length);
        for _ in 0..spec.length {
            centers.push((reflect(px, lo_x, hi_x), reflect(py, lo_y, hi_y)));
            headings.push(heading);
            px += spec.motion.speed * heading.cos();
            py += spec.motion.speed * heading.sin();
            if spec.motion.turn_rate > 0.0 {
                heading += turn.sample(&mut rng);
            }
        }
        let target_boxes = centers
            .iter()
            .enumerate()
            .map(|(t, &(cx, cy))| {
                let (w, h) = match spec.deform {
                    Some(d) => {
                        let s = (2.0 * PI * t as f64 / d.period).sin() * d.amplitude;
                        (spec.target.width * (1.0 + s), spec.target.height * (1.0 - s))
                    }
                    None => (spec.target.width, spec.target.height),
                };
                BoundingBox::from_center(cx, cy, w, h)
            })
            .collect::<Vec<_>>();

        let mut sprites = Vec::new();
        let mut distractor_boxes = Vec::new();
        for d in &spec.distractors {
            let desc = distractor_look(&spec.target, d);
            let (dw, dh) = (desc.width, desc.height);
            let (dlo_x, dhi_x) = (dw / 2.0, cw - dw / 2.0);
            let (dlo_y, dhi_y) = (dh / 2.0, ch - dh / 2.0);
            let mut drng = ChaCha8Rng::seed_from_u64(d.seed);
            let (anchor_t, ax, ay, dir) = match d.crossing {
                Some(tc) => {
                    // leave at an angle of at least 60 degrees to the target
                    let off = drng.gen_range(PI / 3.0..5.0 * PI / 3.0);
                    let (ax, ay) = centers[tc];
                    (tc, ax, ay, headings[tc] + off)
                }
                None => {
                    let mut best = (0.0, 0.0);
                    for _ in 0..32 {
                        best = (drng.gen_range(dlo_x..=dhi_x), drng.gen_range(dlo_y..=dhi_y));
                        let probe = BoundingBox::from_center(best.0, best.1, dw, dh);
                        let (tx, ty) = target_boxes[0].center();
                        let keep_out = BoundingBox::from_center(tx, ty, target_boxes[0].w * 1.5, target_boxes[0].h * 1.5);
                        if crate::geometry::iou(&probe, &keep_out) == 0.0 {
                            break;
                        }
                    }
                    (0, best.0, best.1, drng.gen_range(0.0..2.0 * PI))
                }
            };
            let boxes = (0..spec.length)
                .map(|t| {
                    let dt = t as f64 - anchor_t as f64;
                    let x = reflect(ax + d.speed * dt * dir.cos(), dlo_x, dhi_x);
                    let y = reflect(ay + d.speed * dt * dir.sin(), dlo_y, dhi_y);
                    BoundingBox::from_center(x, y, dw, dh)
                })
                .collect();
            distractor_boxes.push(boxes);
            sprites.push(Sprite::from_desc(&desc));
        }
        sprites.push(Sprite::from_desc(&spec.target));
        Ok(Self { spec, background, target_boxes, distractor_boxes, sprites })
    }

    pub fn len(&self) -> usize {
        self.spec.length
    }

    pub fn is_empty(&self) -> bool {
        self.spec.length == 0
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.target_boxes
    }

    pub fn distractor_boxes(&self) -> &[Vec<BoundingBox>] {
        &self.distractor_boxes
    }

    pub fn occluded(&self, t: usize) -> Option<&OcclusionEvent> {
        self.spec.occlusions.iter().find(|o| (o.start..o.start + o.duration).contains(&t))
    }

    pub fn visible(&self) -> Vec<bool> {
        (0..self.len()).map(|t| self.occluded(t).is_none()).collect()
    }

    /// Renders frame `t`; identical inputs give bit-identical frames.
    pub fn render(&self, t: usize) -> Frame {
        let mut f = self.background.clone();
        for (k, boxes) in self.distractor_boxes.iter().enumerate() {
            self.sprites[k].draw(&mut f, &boxes[t]);
        }
        let target = &self.target_boxes[t];
        self.sprites.last().unwrap().draw(&mut f, target);
        if let Some(o) = self.occluded(t) {
            let (cx, cy) = target.center();
            let cover = BoundingBox::from_center(cx, cy, target.w * 1.6, target.h * 1.6);
            let flat = Sprite {
                shape: ShapeKind::Rectangle,
                color: o.color,
                stripes: Stripes::new(0, 0.0),
            };
            flat.draw(&mut f, &cover);
        }
        if self.spec.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ (t as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let n = Normal::new(0.0f32, self.spec.noise).unwrap();
            for v in &mut f.data {
                *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        f
    }
}

fn render_background(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Frame {
    let base: f32 = rng.gen_range(0.25..0.5);
    let tint: [f32; 3] = [rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06)];
    let waves: Vec<(f64, f64, f64, f32)> = (0..3)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..PI);
            let k = 2.0 * PI / rng.gen_range(20.0..60.0);
            (k * a.cos(), k * a.sin(), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.02..0.05))
        })
        .collect();
    Frame::from_fn(width, height, |x, y| {
        let mut v = base;
        for &(kx, ky, ph, amp) in &waves {
            v += amp * ((kx * x as f64 + ky * y as f64 + ph).sin() as f32);
        }
        [(v + tint[0]).clamp(0.0, 1.0), (v + tint[1]).clamp(0.0, 1.0), (v + tint[2]).clamp(0.0, 1.0)]
    })
}

/// Appearance of a distractor at the given similarity to the target. The
/// color moves toward the target's inverse by `(1 - s)²`, so mid-range
/// levels already give near-identical colors; shape and texture match the
/// target only from 0.9 up.
fn distractor_look(target: &ObjectDesc, d: &DistractorDesc) -> ObjectDesc {
    let t = ((1.0 - d.similarity) * (1.0 - d.similarity)) as f32;
    let color = [0, 1, 2].map(|i| (1.0 - t) * target.color[i] + t * (1.0 - target.color[i]));
    let same = d.similarity >= 0.9;
    ObjectDesc {
        shape: if same { target.shape } else { target.shape.next() },
        color,
        width: target.width,
        height: target.height,
        texture_seed: if same { target.texture_seed } else { target.texture_seed ^ d.seed },
        texture_strength: target.texture_strength,
    }
}

/// Renders every frame lazily through the returned record.
pub fn generate_synthetic(spec: SynthSpec, name: &str) -> Result<SequenceRecord> {
    let scene = SynthScene::new(spec)?;
    Ok(SequenceRecord {
        name: name.to_string(),
        boxes: scene.boxes().to_vec(),
        visible: scene.visible(),
        attributes: Vec::new(),
        frames: FrameSource::Synthetic(Arc::new(scene)),
    })
}

/// A random saturated color.
pub(crate) fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    let h: f32 = rng.gen_range(0.0..6.0);
    let s: f32 = rng.gen_range(0.6..1.0);
    let v: f32 = rng.gen_range(0.7..1.0);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub(crate) fn random_object(rng: &mut impl Rng, size: (f64, f64)) -> ObjectDesc {
    ObjectDesc {
        shape: ShapeKind::ALL[rng.gen_range(0..4)],
        color: random_color(rng),
        width: rng.gen_range(size.0..size.1),
        height: rng.gen_range(size.0..size.1),
        texture_seed: rng.gen(),
        texture_strength: 0.15,
    }
}

/// A single still frame with a target and `others` unrelated objects, the
/// stand-in for still-image training data.
pub fn generate_still(seed: u64, width: usize, height: usize, others: usize) -> Result<SequenceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = random_object(&mut rng, (14.0, 26.0));
    let distractors = (0..others)
        .map(|_| DistractorDesc { similarity: rng.gen_range(0.0..0.6), speed: 0.0, crossing: None, seed: rng.gen() })
        .collect();
    let spec = SynthSpec {
        width,
        height,
        length: 1,
        target,
        start: None,
        distractors,
        motion: MotionModel { speed: 0.0, turn_rate: 0.0 },
        occlusions: Vec::new(),
        deform: None,
        noise: 0.02,
        seed: rng.gen(),
    };
    generate_synthetic(spec, &format!("still-{seed}"))
}
