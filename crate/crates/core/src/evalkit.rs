//! One-pass evaluation: success, precision and normalized-precision curves,
//! OP and GOT-10k style scores, and per-attribute breakdowns.
//!
//! Frame 0 is the initialization frame and is never scored. Frames whose
//! target is absent are excluded from the overlap statistics, except that a
//! prediction made there with confidence above `absent_confidence` counts
//! as a failed frame.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{parse_box_line, SequenceRecord};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Points of the IoU threshold grid over `[0, 1]`.
    pub success_points: usize,
    /// Largest center-distance threshold in pixels.
    pub precision_max: f64,
    pub precision_points: usize,
    /// Largest normalized-distance threshold.
    pub npr_max: f64,
    pub npr_points: usize,
    /// Confidence above which a prediction on an absent frame is a failure.
    pub absent_confidence: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            success_points: 101,
            precision_max: 50.0,
            precision_points: 51,
            npr_max: 0.5,
            npr_points: 51,
            absent_confidence: 0.5,
        }
    }
}

impl EvalConfig {
    fn grid(max: f64, points: usize) -> Vec<f64> {
        (0..points).map(|k| max * k as f64 / (points - 1) as f64).collect()
    }

    pub fn success_thresholds(&self) -> Vec<f64> {
        Self::grid(1.0, self.success_points)
    }

    pub fn precision_thresholds(&self) -> Vec<f64> {
        Self::grid(self.precision_max, self.precision_points)
    }

    pub fn npr_thresholds(&self) -> Vec<f64> {
        Self::grid(self.npr_max, self.npr_points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub name: String,
    pub predictions: Vec<BoundingBox>,
    pub ground_truth: Vec<BoundingBox>,
    pub absent: Vec<bool>,
    pub confidences: Option<Vec<f64>>,
    pub attributes: Vec<String>,
}

impl SequenceResult {
    pub fn new(seq: &SequenceRecord, predictions: Vec<BoundingBox>, confidences: Option<Vec<f64>>) -> Result<Self> {
        let r = Self {
            name: seq.name.clone(),
            predictions,
            ground_truth: seq.boxes.clone(),
            absent: seq.visible.iter().map(|v| !v).collect(),
            confidences,
            attributes: seq.attributes.clone(),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ground_truth.len();
        if self.predictions.len() != n || self.absent.len() != n || self.confidences.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::Precondition(format!(
                "{}: {} predictions for {} ground-truth frames",
                self.name,
                self.predictions.len(),
                n
            )));
        }
        Ok(())
    }
}

/// Scores of one evaluated frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub iou: f64,
    /// Center distance in pixels; infinite for failed absent frames.
    pub distance: f64,
    /// Size-normalized center distance; `None` for zero-size ground truth.
    pub normalized: Option<f64>,
}

const FAILED: FrameScore = FrameScore { iou: 0.0, distance: f64::INFINITY, normalized: Some(f64::INFINITY) };

/// Scored frames of one result, skipping frame 0.
pub fn frame_scores(r: &SequenceResult, cfg: &EvalConfig) -> Vec<FrameScore> {
    let mut out = Vec::new();
    for i in 1..r.ground_truth.len() {
        let gt = &r.ground_truth[i];
        let pred = &r.predictions[i];
        if r.absent[i] || !gt.is_valid() {
            let conf = r.confidences.as_ref().map(|c| c[i]);
            if conf.is_some_and(|c| c > cfg.absent_confidence) {
                out.push(FAILED);
            }
            continue;
        }
        if !pred.is_valid() {
            out.push(FAILED);
            continue;
        }
        let (pcx, pcy) = pred.center();
        let (gcx, gcy) = gt.center();
        let (dx, dy) = (pcx - gcx, pcy - gcy);
        let normalized = (gt.w > 0.0 && gt.h > 0.0).then(|| ((dx / gt.w).powi(2) + (dy / gt.h).powi(2)).sqrt());
        out.push(FrameScore { iou: iou(pred, gt), distance: (dx * dx + dy * dy).sqrt(), normalized });
    }
    out
}

/// Fraction of values above (`strict`) or at most (`!strict`) each threshold.
fn curve(values: &[f64], thresholds: &[f64], above: bool) -> Vec<f64> {
    let n = values.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&t| values.iter().filter(|&&v| if above { v > t } else { v <= t }).count() as f64 / n)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn success_curve(ious: &[f64], cfg: &EvalConfig) -> Vec<f64> {
    curve(ious, &cfg.success_thresholds(), true)
}

/// Mean of the success curve over the threshold grid.
pub fn success_auc(ious: &[f64], cfg: &EvalConfig) -> f64 {
    mean(&success_curve(ious, cfg))
}

pub fn precision_curve(distances: &[f64], cfg: &EvalConfig) -> Vec<f64> {
    curve(distances, &cfg.precision_thresholds(), false)
}

pub fn precision_auc(distances: &[f64], cfg: &EvalConfig) -> f64 {
    mean(&precision_curve(distances, cfg))
}

pub fn precision_at(distances: &[f64], pixels: f64) -> f64 {
    curve(distances, &[pixels], false)[0]
}

pub fn normalized_precision_curve(normalized: &[f64], cfg: &EvalConfig) -> Vec<f64> {
    curve(normalized, &cfg.npr_thresholds(), false)
}

pub fn normalized_precision_auc(normalized: &[f64], cfg: &EvalConfig) -> f64 {
    mean(&normalized_precision_curve(normalized, cfg))
}

/// Fractions of frames with IoU above 0.5 and 0.75.
pub fn op_scores(ious: &[f64]) -> (f64, f64) {
    let c = curve(ious, &[0.5, 0.75], true);
    (c[0], c[1])
}

/// Average overlap and success rates at 0.5 and 0.75, each computed per
/// sequence and then averaged over sequences.
pub fn got10k_scores(per_sequence: &[Vec<f64>]) -> (f64, f64, f64) {
    let seqs: Vec<&Vec<f64>> = per_sequence.iter().filter(|s| !s.is_empty()).collect();
    if seqs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = seqs.len() as f64;
    let ao = seqs.iter().map(|s| mean(s)).sum::<f64>() / n;
    let sr = |k: f64| seqs.iter().map(|s| curve(s, &[k], true)[0]).sum::<f64>() / n;
    (ao, sr(0.5), sr(0.75))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sequences: usize,
    pub frames: usize,
    /// Frames left out of normalized precision for zero-size ground truth.
    pub npr_excluded: usize,
    pub success_auc: f64,
    /// Continuous counterpart of the success AUC: the mean IoU.
    pub mean_iou: f64,
    pub precision_auc: f64,
    pub precision_20: f64,
    pub normalized_precision_auc: f64,
    pub op50: f64,
    pub op75: f64,
    pub ao: f64,
    pub sr50: f64,
    pub sr75: f64,
}

impl MetricReport {
    pub fn compute(results: &[SequenceResult], cfg: &EvalConfig) -> Self {
        let per_seq: Vec<Vec<FrameScore>> = results.iter().map(|r| frame_scores(r, cfg)).collect();
        let all: Vec<FrameScore> = per_seq.iter().flatten().copied().collect();
        let ious: Vec<f64> = all.iter().map(|s| s.iou).collect();
        let dists: Vec<f64> = all.iter().map(|s| s.distance).collect();
        let norm: Vec<f64> = all.iter().filter_map(|s| s.normalized).collect();
        let (op50, op75) = op_scores(&ious);
        let seq_ious: Vec<Vec<f64>> = per_seq.iter().map(|s| s.iter().map(|f| f.iou).collect()).collect();
        let (ao, sr50, sr75) = got10k_scores(&seq_ious);
        Self {
            sequences: results.len(),
            frames: all.len(),
            npr_excluded: all.len() - norm.len(),
            success_auc: success_auc(&ious, cfg),
            mean_iou: mean(&ious),
            precision_auc: precision_auc(&dists, cfg),
            precision_20: precision_at(&dists, 20.0),
            normalized_precision_auc: normalized_precision_auc(&norm, cfg),
            op50,
            op75,
            ao,
            sr50,
            sr75,
        }
    }

    /// `(name, value)` pairs of the rate metrics followed by the frame count.
    pub fn metrics(&self) -> [(&'static str, f64); 11] {
        [
            ("success_auc", self.success_auc),
            ("mean_iou", self.mean_iou),
            ("precision_auc", self.precision_auc),
            ("precision_20", self.precision_20),
            ("normalized_precision_auc", self.normalized_precision_auc),
            ("op50", self.op50),
            ("op75", self.op75),
            ("ao", self.ao),
            ("sr50", self.sr50),
            ("sr75", self.sr75),
            ("frames", self.frames as f64),
        ]
    }

    /// `key = value` lines.
    pub fn to_text(&self, config_hash: &str) -> String {
        let mut s = format!("config_hash = {config_hash}\nsequences = {}\n", self.sequences);
        for (k, v) in self.metrics() {
            if k == "frames" {
                let _ = writeln!(s, "frames = {}", self.frames);
            } else {
                let _ = writeln!(s, "{k} = {v:.6}");
            }
        }
        let _ = writeln!(s, "npr_excluded = {}", self.npr_excluded);
        s
    }
}

/// Parses a report written by [`MetricReport::to_text`] into key/value pairs.
pub fn parse_report(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Reads a raw result file of `x,y,w,h` lines. Lines starting with `#`
/// are comments.
pub fn read_result_file(path: &Path) -> Result<Vec<BoundingBox>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            parse_box_line(l).map_err(|message| Error::Parse { path: path.to_path_buf(), message: format!("line {}: {message}", i + 1) })
        })
        .collect()
}

/// The `# config_hash = ...` header of a result file, if present.
pub fn result_file_hash(path: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').split_once('='))
        .find(|(k, _)| k.trim() == "config_hash")
        .map(|(_, v)| v.trim().to_string()))
}

pub fn write_result_file(path: &Path, boxes: &[BoundingBox], config_hash: Option<&str>) -> Result<()> {
    let mut s = String::new();
    if let Some(h) = config_hash {
        let _ = writeln!(s, "# config_hash = {h}");
    }
    for b in boxes {
        let _ = writeln!(s, "{:.4},{:.4},{:.4},{:.4}", b.x, b.y, b.w, b.h);
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_confidence_file(path: &Path) -> Result<Vec<f64>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse { path: path.to_path_buf(), message: format!("bad confidence `{l}`") })
        })
        .collect()
}

pub fn write_confidence_file(path: &Path, conf: &[f64]) -> Result<()> {
    let mut s = String::new();
    for c in conf {
        let _ = writeln!(s, "{c:.6}");
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalError {
    pub sequence: String,
    pub message: String,
}

/// Pairs externally produced result files (`<dir>/<sequence>.txt`, with an
/// optional `<sequence>_confidence.txt`) with the dataset. Missing or
/// malformed files become error records.
pub fn results_from_files(dir: &Path, dataset: &[SequenceRecord]) -> (Vec<SequenceResult>, Vec<EvalError>) {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for seq in dataset {
        let path = dir.join(format!("{}.txt", seq.name));
        let conf_path = dir.join(format!("{}_confidence.txt", seq.name));
        let attempt = read_result_file(&path).and_then(|boxes| {
            let conf = if conf_path.exists() { Some(read_confidence_file(&conf_path)?) } else { None };
            SequenceResult::new(seq, boxes, conf)
        });
        match attempt {
            Ok(r) => ok.push(r),
            Err(e) => errors.push(EvalError { sequence: seq.name.clone(), message: e.to_string() }),
        }
    }
    (ok, errors)
}

/// Reports per attribute tag. `tags` overrides the tags carried by the
/// results when given; tags naming unknown sequences are skipped with a
/// warning, and tags with no scored sequence produce no row.
pub fn attribute_report(
    results: &[SequenceResult],
    tags: Option<&BTreeMap<String, Vec<String>>>,
    cfg: &EvalConfig,
) -> Vec<(String, MetricReport)> {
    let known: BTreeSet<&str> = results.iter().map(|r| r.name.as_str()).collect();
    let mut by_tag: BTreeMap<String, Vec<SequenceResult>> = BTreeMap::new();
    match tags {
        Some(map) => {
            for (seq, seq_tags) in map {
                if !known.contains(seq.as_str()) {
                    log::warn!("attribute file names unknown sequence `{seq}`, skipped");
                    continue;
                }
                let r = results.iter().find(|r| &r.name == seq).unwrap();
                for t in seq_tags {
                    by_tag.entry(t.clone()).or_default().push(r.clone());
                }
            }
        }
        None => {
            for r in results {
                for t in &r.attributes {
                    by_tag.entry(t.clone()).or_default().push(r.clone());
                }
            }
        }
    }
    by_tag
        .into_iter()
        .map(|(t, rs)| (t, MetricReport::compute(&rs, cfg)))
        .filter(|(_, rep)| rep.frames > 0)
        .collect()
}

/// Plot-ready table: `attribute<TAB>metric<TAB>value` rows.
pub fn attribute_table(rows: &[(String, MetricReport)]) -> String {
    let mut s = String::from("attribute\tmetric\tvalue\n");
    for (tag, rep) in rows {
        for (k, v) in rep.metrics() {
            let _ = writeln!(s, "{tag}\t{k}\t{v:.6}");
        }
    }
    s
}

pub fn read_attribute_tags(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut it = line.split_whitespace();
        let (Some(name), Some(tags)) = (it.next(), it.next()) else {
            return Err(Error::Parse { path: path.to_path_buf(), message: format!("line {}: expected `name tags`", i + 1) });
        };
        map.insert(name.to_string(), tags.split(',').filter(|t| !t.is_empty()).map(String::from).collect());
    }
    Ok(map)
}
