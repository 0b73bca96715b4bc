//! Boxes, grid coordinates and the search-region affine map.
//!
//! Boxes use the `(x, y, w, h)` convention with a top-left origin, in image
//! pixels. A [`SearchRegion`] is the square window cropped around the last
//! target estimate; it maps between image pixels, model-input (patch)
//! pixels and normalized `[0, 1]` region coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Builds a box, rejecting non-finite coordinates and non-positive extents.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox { x, y, w, h })
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { x: self.x * s, y: self.y * s, w: self.w * s, h: self.h * s }
    }

    /// Moves the box inside a `width`×`height` frame, keeping its size when it
    /// fits and clipping it otherwise.
    pub fn clamp_to_frame(&self, width: f64, height: f64) -> Self {
        let w = self.w.min(width).max(1.0);
        let h = self.h.min(height).max(1.0);
        let x = self.x.max(0.0).min(width - w);
        let y = self.y.max(0.0).min(height - h);
        Self { x, y, w, h }
    }

    /// Intersection with the frame rectangle, or `None` when it is empty.
    pub fn intersect_frame(&self, width: f64, height: f64) -> Option<Self> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > x0 && y1 > y0).then(|| Self::from_corners(x0, y0, x1, y1))
    }

    pub fn center_distance(&self, other: &Self) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }
}

fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    iw * ih
}

/// Intersection over union; zero for disjoint or degenerate pairs.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || !union.is_finite() {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `IoU - (enclosing - union) / enclosing`.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let ew = a.right().max(b.right()) - a.x.min(b.x);
    let eh = a.bottom().max(b.bottom()) - a.y.min(b.y);
    let enclosing = ew * eh;
    if union <= 0.0 || enclosing <= 0.0 {
        return -1.0;
    }
    inter / union - (enclosing - union) / enclosing
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub row: usize,
    pub col: usize,
}

impl GridPoint {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Square crop window around a target estimate.
///
/// `side` is in image pixels and `resolution` in model-input pixels. The
/// map is `image = origin + patch * side / resolution`, where `origin` is
/// the window's top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRegion {
    pub center_x: f64,
    pub center_y: f64,
    pub side: f64,
    pub resolution: usize,
}

impl SearchRegion {
    pub fn new(center_x: f64, center_y: f64, side: f64, resolution: usize) -> Result<Self> {
        if !(side > 0.0 && side.is_finite() && center_x.is_finite() && center_y.is_finite())
            || resolution == 0
        {
            return Err(Error::Precondition(format!(
                "search region needs a positive side and resolution, got side={side} resolution={resolution}"
            )));
        }
        Ok(Self { center_x, center_y, side, resolution })
    }

    /// Window of side `scale_factor * sqrt(w * h)` centered on `b`.
    pub fn around(b: &BoundingBox, scale_factor: f64, resolution: usize) -> Result<Self> {
        let (cx, cy) = b.center();
        Self::new(cx, cy, scale_factor * (b.w * b.h).sqrt(), resolution)
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.center_x - self.side / 2.0, self.center_y - self.side / 2.0)
    }

    /// Image pixels per patch pixel.
    pub fn scale(&self) -> f64 {
        self.side / self.resolution as f64
    }

    pub fn norm_to_image(&self, nx: f64, ny: f64) -> (f64, f64) {
        let (ox, oy) = self.origin();
        (ox + nx * self.side, oy + ny * self.side)
    }

    pub fn image_to_norm(&self, x: f64, y: f64) -> (f64, f64) {
        let (ox, oy) = self.origin();
        ((x - ox) / self.side, (y - oy) / self.side)
    }

    pub fn patch_to_image(&self, u: f64, v: f64) -> (f64, f64) {
        let r = self.resolution as f64;
        self.norm_to_image(u / r, v / r)
    }

    pub fn image_to_patch(&self, x: f64, y: f64) -> (f64, f64) {
        let r = self.resolution as f64;
        let (nx, ny) = self.image_to_norm(x, y);
        (nx * r, ny * r)
    }

    /// Normalized position of the center of `cell` on an `h`×`w` grid.
    pub fn cell_center_norm(cell: GridPoint, h: usize, w: usize) -> (f64, f64) {
        ((cell.col as f64 + 0.5) / w as f64, (cell.row as f64 + 0.5) / h as f64)
    }

    /// Image-coordinate center of a grid cell.
    pub fn cell_center_image(&self, cell: GridPoint, h: usize, w: usize) -> (f64, f64) {
        let (nx, ny) = Self::cell_center_norm(cell, h, w);
        self.norm_to_image(nx, ny)
    }

    /// Box expressed in normalized region coordinates as `(x0, y0, x1, y1)`.
    pub fn box_to_norm(&self, b: &BoundingBox) -> [f64; 4] {
        let (x0, y0) = self.image_to_norm(b.x, b.y);
        let (x1, y1) = self.image_to_norm(b.right(), b.bottom());
        [x0, y0, x1, y1]
    }

    pub fn norm_to_box(&self, c: [f64; 4]) -> BoundingBox {
        let (x0, y0) = self.norm_to_image(c[0], c[1]);
        let (x1, y1) = self.norm_to_image(c[2], c[3]);
        BoundingBox::from_corners(x0, y0, x1, y1)
    }

    /// Grid cell whose area contains a normalized point, clamped to the grid.
    pub fn norm_to_cell(nx: f64, ny: f64, h: usize, w: usize) -> GridPoint {
        let col = (nx * w as f64).floor().clamp(0.0, (w - 1) as f64) as usize;
        let row = (ny * h as f64).floor().clamp(0.0, (h - 1) as f64) as usize;
        GridPoint { row, col }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { center_x: self.center_x * s, center_y: self.center_y * s, side: self.side * s, ..*self }
    }

    /// True when any part of the window falls outside a `width`×`height` frame.
    pub fn needs_padding(&self, width: usize, height: usize) -> bool {
        let (ox, oy) = self.origin();
        ox < 0.0 || oy < 0.0 || ox + self.side > width as f64 || oy + self.side > height as f64
    }
}
