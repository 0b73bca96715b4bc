//! Test-time prompt refinement.
//!
//! Peaks of the initial prompt are treated as target candidates. Each
//! candidate gets a box from the previous frame's regression map, an
//! embedding of its crop, and an importance score: the average over the two
//! templates of a softmax (across candidates) of the cosine similarity
//! between candidate and template. Candidates whose importance exceeds
//! `gamma` are set to exactly 1 in the prompt.

use serde::{Deserialize, Serialize};

use crate::encoders::EmbeddingVector;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GridPoint, SearchRegion};
use crate::grid::{ltrb_decode, LtrbMap, ScoreMap};

/// Side of the pooling blocks used to find local maxima.
pub const BLOCK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TprConfig {
    /// Minimum prompt value for a peak to become a candidate.
    pub tau: f64,
    /// Importance a candidate must strictly exceed to be accepted.
    pub gamma: f64,
    pub max_candidates: usize,
}

impl Default for TprConfig {
    fn default() -> Self {
        Self { tau: 0.05, gamma: 0.25, max_candidates: 8 }
    }
}

impl TprConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !(0.0..=1.0).contains(&self.gamma) || self.max_candidates == 0 {
            return Err(Error::Config(format!(
                "tpr: need tau >= 0, 0 <= gamma <= 1 and max_candidates >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub points: Vec<GridPoint>,
    pub scores: Vec<f64>,
    pub boxes: Vec<BoundingBox>,
    pub embeddings: Vec<EmbeddingVector>,
    pub importance: Vec<f64>,
    /// Boxes came from the initial target size rather than a regression map.
    pub boxes_from_fallback: bool,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn accepted(&self, gamma: f64) -> impl Iterator<Item = GridPoint> + '_ {
        self.points.iter().zip(&self.importance).filter(move |(_, &d)| d > gamma).map(|(p, _)| *p)
    }
}

/// Local maxima of `h_can` over non-overlapping 3×3 blocks (a trailing
/// partial block at the bottom or right edge counts as a block) whose value
/// is at least `tau`. Within a block the first maximal cell in row-major
/// order wins. Results are sorted by score, highest first, and truncated to
/// `max_candidates`.
pub fn extract_candidates(h_can: &ScoreMap, cfg: &TprConfig) -> Vec<GridPoint> {
    let mut found: Vec<(GridPoint, f64)> = Vec::new();
    for r0 in (0..h_can.h).step_by(BLOCK) {
        for c0 in (0..h_can.w).step_by(BLOCK) {
            let mut best: Option<(GridPoint, f64)> = None;
            for r in r0..(r0 + BLOCK).min(h_can.h) {
                for c in c0..(c0 + BLOCK).min(h_can.w) {
                    let p = GridPoint::new(r, c);
                    let v = h_can.get(p);
                    if best.map_or(true, |(_, b)| v > b) {
                        best = Some((p, v));
                    }
                }
            }
            if let Some((p, v)) = best {
                if v >= cfg.tau {
                    found.push((p, v));
                }
            }
        }
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    found.truncate(cfg.max_candidates);
    found.into_iter().map(|(p, _)| p).collect()
}

/// Boxes for each candidate. With a previous regression map the distances
/// stored at the candidate cell are decoded around that cell of the current
/// region; on the first tracked frame every candidate gets the initial
/// target size centered on its cell, and the returned flag is set.
pub fn retrieve_candidate_boxes(
    points: &[GridPoint],
    last_d: Option<&LtrbMap>,
    region: &SearchRegion,
    grid: (usize, usize),
    initial_size: (f64, f64),
) -> (Vec<BoundingBox>, bool) {
    match last_d {
        Some(d) => (points.iter().map(|&p| ltrb_decode(d, p, region).bbox).collect(), false),
        None => {
            let boxes = points
                .iter()
                .map(|&p| {
                    let (cx, cy) = region.cell_center_image(p, grid.0, grid.1);
                    BoundingBox::from_center(cx, cy, initial_size.0, initial_size.1)
                })
                .collect();
            (boxes, true)
        }
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Importance of each candidate: the mean over both templates of the
/// candidate's softmax share of cosine similarity to that template.
pub fn importance_scores(candidates: &[EmbeddingVector], templates: [&EmbeddingVector; 2]) -> Vec<f64> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut d = vec![0.0; candidates.len()];
    for t in templates {
        let cos: Vec<f64> = candidates.iter().map(|c| c.cosine(t)).collect();
        for (acc, s) in d.iter_mut().zip(softmax(&cos)) {
            *acc += 0.5 * s;
        }
    }
    d
}

/// Sets every accepted candidate cell to exactly 1; all other cells are
/// copied unchanged.
pub fn refine_prompt(h_can: &ScoreMap, points: &[GridPoint], importance: &[f64], cfg: &TprConfig) -> ScoreMap {
    let mut out = h_can.clone();
    for (&p, &d) in points.iter().zip(importance) {
        if d > cfg.gamma && out.contains(p) {
            out.set(p, 1.0);
        }
    }
    out
}
