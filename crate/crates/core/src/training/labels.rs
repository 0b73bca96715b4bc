//! Classification and regression targets.

use crate::geometry::{BoundingBox, GridPoint, SearchRegion};
use crate::grid::{ltrb_encode, LtrbMap, ScoreMap};

/// Gaussian classification map and ltrb regression map for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPair {
    pub cls: ScoreMap,
    pub reg: LtrbMap,
}

impl LabelPair {
    pub fn new(b: &BoundingBox, region: &SearchRegion, h: usize, w: usize, sigma_factor: f64) -> Self {
        let stride = region.resolution as f64 / w as f64;
        Self {
            cls: make_gaussian_label(b, region, h, w, sigma_factor, stride),
            reg: ltrb_encode(b, region, h, w),
        }
    }

    /// Regression values with invalid cells zeroed.
    pub fn masked_reg(&self) -> Vec<f64> {
        let mut v = self.reg.values.clone();
        for (i, &m) in self.reg.mask.iter().enumerate() {
            if !m {
                v[i * 4..i * 4 + 4].fill(0.0);
            }
        }
        v
    }
}

/// Gaussian bump centered on the cell nearest to the box center, with
/// `sigma = sigma_factor * min(h, w)` cells. The map is all zeros when the
/// center falls outside the region.
pub fn make_gaussian_label(
    b: &BoundingBox,
    region: &SearchRegion,
    h: usize,
    w: usize,
    sigma_factor: f64,
    stride: f64,
) -> ScoreMap {
    let (cx, cy) = b.center();
    let (nx, ny) = region.image_to_norm(cx, cy);
    let mut map = ScoreMap::zeros(h, w, stride);
    if !(0.0..1.0).contains(&nx) || !(0.0..1.0).contains(&ny) {
        return map;
    }
    let peak = SearchRegion::norm_to_cell(nx, ny, h, w);
    let sigma = sigma_factor * h.min(w) as f64;
    let denom = 2.0 * sigma * sigma;
    for row in 0..h {
        for col in 0..w {
            let dr = row as f64 - peak.row as f64;
            let dc = col as f64 - peak.col as f64;
            map.set(GridPoint::new(row, col), (-(dr * dr + dc * dc) / denom).exp());
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> SearchRegion {
        SearchRegion::new(50.0, 50.0, 100.0, 100).unwrap()
    }

    #[test]
    fn peak_is_one_at_center_cell() {
        let b = BoundingBox::from_center(53.0, 31.0, 10.0, 10.0);
        let m = make_gaussian_label(&b, &region(), 10, 10, 0.125, 10.0);
        assert_eq!(m.get(GridPoint::new(3, 5)), 1.0);
        assert_eq!(m.argmax(), GridPoint::new(3, 5));
    }

    #[test]
    fn one_sigma_value() {
        // sigma = 0.25 * 8 = 2 cells
        let b = BoundingBox::from_center(45.0, 45.0, 10.0, 10.0);
        let r = SearchRegion::new(40.0, 40.0, 80.0, 80).unwrap();
        let m = make_gaussian_label(&b, &r, 8, 8, 0.25, 10.0);
        assert_eq!(m.argmax(), GridPoint::new(4, 4));
        assert!((m.get(GridPoint::new(4, 6)) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((m.get(GridPoint::new(4, 6)) - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn matches_direct_evaluation() {
        let b = BoundingBox::from_center(27.0, 71.0, 6.0, 9.0);
        let m = make_gaussian_label(&b, &region(), 5, 5, 0.125, 20.0);
        // center (27, 71) lies in cell (row 3, col 1) of a 20 px grid
        let sigma: f64 = 0.125 * 5.0;
        for r in 0..5 {
            for c in 0..5 {
                let d2 = (r as f64 - 3.0).powi(2) + (c as f64 - 1.0).powi(2);
                let want = (-d2 / (2.0 * sigma * sigma)).exp();
                assert!((m.get(GridPoint::new(r, c)) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn outside_center_gives_zeros() {
        let b = BoundingBox::from_center(500.0, 50.0, 10.0, 10.0);
        let m = make_gaussian_label(&b, &region(), 6, 6, 0.125, 10.0);
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifting_center_by_one_cell_shifts_map() {
        let a = make_gaussian_label(&BoundingBox::from_center(35.0, 45.0, 8.0, 8.0), &region(), 10, 10, 0.125, 10.0);
        let b = make_gaussian_label(&BoundingBox::from_center(45.0, 45.0, 8.0, 8.0), &region(), 10, 10, 0.125, 10.0);
        for r in 0..10 {
            for c in 0..9 {
                assert_eq!(a.get(GridPoint::new(r, c)), b.get(GridPoint::new(r, c + 1)));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn peak_is_exactly_one(cx in 0.0..99.9f64, cy in 0.0..99.9f64, f in 0.05..0.3f64) {
                let b = BoundingBox::from_center(cx, cy, 8.0, 8.0);
                let m = make_gaussian_label(&b, &region(), 10, 10, f, 10.0);
                prop_assert_eq!(m.max(), 1.0);
                prop_assert!(m.values.iter().all(|&v| v > 0.0 && v <= 1.0));
            }

            #[test]
            fn one_cell_shift_moves_the_map(r in 0usize..9, c in 0usize..9, f in 0.05..0.3f64) {
                let at = |r: usize, c: usize| {
                    let b = BoundingBox::from_center(c as f64 * 10.0 + 5.0, r as f64 * 10.0 + 5.0, 8.0, 8.0);
                    make_gaussian_label(&b, &region(), 10, 10, f, 10.0)
                };
                let (m, right, down) = (at(r, c), at(r, c + 1), at(r + 1, c));
                for rr in 0..10 {
                    for cc in 0..9 {
                        let (p, q) = (GridPoint::new(rr, cc), GridPoint::new(rr, cc + 1));
                        prop_assert_eq!(m.get(p), right.get(q));
                        let (p, q) = (GridPoint::new(cc, rr), GridPoint::new(cc + 1, rr));
                        prop_assert_eq!(m.get(p), down.get(q));
                    }
                }
            }
        }
    }
}
