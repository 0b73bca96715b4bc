//! Dense grids exchanged between the encoders, prompting modules and the
//! tracking head, plus the ltrb box encoding.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::geometry::{BoundingBox, GridPoint, SearchRegion};

/// H×W confidence grid. `stride` is the number of patch pixels per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub h: usize,
    pub w: usize,
    pub stride: f64,
    pub values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(h: usize, w: usize, stride: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w {
            return shape_err(format!("score map {h}x{w} needs {} values, got {}", h * w, values.len()));
        }
        Ok(Self { h, w, stride, values })
    }

    pub fn zeros(h: usize, w: usize, stride: f64) -> Self {
        Self { h, w, stride, values: vec![0.0; h * w] }
    }

    pub fn get(&self, p: GridPoint) -> f64 {
        self.values[p.row * self.w + p.col]
    }

    pub fn set(&mut self, p: GridPoint, v: f64) {
        self.values[p.row * self.w + p.col] = v;
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        p.row < self.h && p.col < self.w
    }

    /// Cell of the largest value; ties go to the smallest `(row, col)`.
    pub fn argmax(&self) -> GridPoint {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        GridPoint::new(best / self.w, best % self.w)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// H×W×C feature map, cells in row-major order with channels innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub stride: f64,
    pub values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(h: usize, w: usize, c: usize, stride: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w * c {
            return shape_err(format!(
                "feature grid {h}x{w}x{c} needs {} values, got {}",
                h * w * c,
                values.len()
            ));
        }
        Ok(Self { h, w, c, stride, values })
    }

    pub fn zeros(h: usize, w: usize, c: usize, stride: f64) -> Self {
        Self { h, w, c, stride, values: vec![0.0; h * w * c] }
    }

    pub fn cell(&self, p: GridPoint) -> &[f64] {
        let i = (p.row * self.w + p.col) * self.c;
        &self.values[i..i + self.c]
    }

    pub fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    pub fn check_same_shape(&self, other: &FeatureGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            shape_err(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.h, self.w, self.c, other.h, other.w, other.c
            ))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// H×W×4 regression grid of (left, top, right, bottom) distances from each
/// cell center to the box edges, in units of the search-region side.
///
/// `mask` marks the cells that carry a valid encoding; predictions have it
/// set everywhere, encoded labels only on cells whose center lies in the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtrbMap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl LtrbMap {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w * 4 {
            return shape_err(format!("ltrb map {h}x{w} needs {} values, got {}", h * w * 4, values.len()));
        }
        Ok(Self { h, w, values, mask: vec![true; h * w] })
    }

    pub fn at(&self, p: GridPoint) -> [f64; 4] {
        let i = (p.row * self.w + p.col) * 4;
        [self.values[i], self.values[i + 1], self.values[i + 2], self.values[i + 3]]
    }

    pub fn is_valid(&self, p: GridPoint) -> bool {
        self.mask[p.row * self.w + p.col]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Result of [`ltrb_decode`]; `degenerate` is set when the decoded extent was
/// non-positive and the box was replaced by a 1×1 pixel box at the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedBox {
    pub bbox: BoundingBox,
    pub degenerate: bool,
}

/// Encodes `b` on an `h`×`w` grid laid over `region`.
pub fn ltrb_encode(b: &BoundingBox, region: &SearchRegion, h: usize, w: usize) -> LtrbMap {
    let [x0, y0, x1, y1] = region.box_to_norm(b);
    let mut values = vec![0.0; h * w * 4];
    let mut mask = vec![false; h * w];
    for row in 0..h {
        for col in 0..w {
            let (cx, cy) = SearchRegion::cell_center_norm(GridPoint::new(row, col), h, w);
            if cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1 {
                let i = row * w + col;
                values[i * 4..i * 4 + 4].copy_from_slice(&[cx - x0, cy - y0, x1 - cx, y1 - cy]);
                mask[i] = true;
            }
        }
    }
    LtrbMap { h, w, values, mask }
}

/// Decodes the distances stored at `p` into an image-coordinate box.
pub fn ltrb_decode(d: &LtrbMap, p: GridPoint, region: &SearchRegion) -> DecodedBox {
    let [l, t, r, btm] = d.at(p);
    let (cx, cy) = SearchRegion::cell_center_norm(p, d.h, d.w);
    let bbox = region.norm_to_box([cx - l, cy - t, cx + r, cy + btm]);
    if bbox.is_valid() {
        DecodedBox { bbox, degenerate: false }
    } else {
        let (ax, ay) = region.cell_center_image(p, d.h, d.w);
        DecodedBox { bbox: BoundingBox::from_center(ax, ay, 1.0, 1.0), degenerate: true }
    }
}
