//! Online tracking: initialization, per-frame inference and the reference
//! and template update rules.
//!
//! Per frame: crop the search region around the last box, encode it,
//! generate the prompt from the two templates, optionally refine it with
//! embedding similarity, fuse it into the current features, run the head
//! with the two references and decode the box at the score-map maximum.

use serde::{Deserialize, Serialize};

use crate::data::SequenceRecord;
use crate::encoders::EmbeddingVector;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, SearchRegion};
use crate::grid::{FeatureGrid, LtrbMap, ScoreMap};
use crate::head::{decode_prediction, HeadOutput};
use crate::image::Frame;
use crate::model::PivotModel;
use crate::tpr::{extract_candidates, importance_scores, refine_prompt, retrieve_candidate_boxes, CandidateSet, TprConfig};
use crate::training::labels::LabelPair;

/// Which prompt reaches relation modeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// Skip prompt generation and relation modeling.
    Off,
    /// Use the prompt as generated.
    Initial,
    /// Refine the prompt with embedding similarity first.
    Refined,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [PromptMode::Off, PromptMode::Initial, PromptMode::Refined];

    pub fn from_flags(prompt: bool, tpr: bool) -> Self {
        match (prompt, tpr) {
            (false, _) => PromptMode::Off,
            (true, false) => PromptMode::Initial,
            (true, true) => PromptMode::Refined,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptMode::Off => "no-prompt",
            PromptMode::Initial => "initial-prompt",
            PromptMode::Refined => "refined-prompt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub prompt: bool,
    pub tpr: bool,
    #[serde(rename = "refinement")]
    pub tpr_params: TprConfig,
    /// Minimum score-map peak for replacing the second reference.
    pub update_threshold: f64,
    /// Minimum number of frames between two reference updates.
    pub min_update_gap: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { prompt: true, tpr: true, tpr_params: TprConfig::default(), update_threshold: 0.5, min_update_gap: 5 }
    }
}

impl TrackerConfig {
    pub fn mode(&self) -> PromptMode {
        PromptMode::from_flags(self.prompt, self.tpr)
    }

    pub fn with_mode(mut self, mode: PromptMode) -> Self {
        self.prompt = mode != PromptMode::Off;
        self.tpr = mode == PromptMode::Refined;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    /// First-frame features and labels; never modified.
    pub ref1: (FeatureGrid, LabelPair),
    pub ref2: (FeatureGrid, LabelPair),
    /// First-frame exact-box template; never modified.
    pub tem1: (FeatureGrid, EmbeddingVector),
    pub tem2: (FeatureGrid, EmbeddingVector),
    pub last_d: Option<LtrbMap>,
    pub last_box: BoundingBox,
    pub frame_index: usize,
    pub last_ref_update: usize,
    pub initial_size: (f64, f64),
}

/// Everything produced while tracking one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub region: SearchRegion,
    pub h_can: Option<ScoreMap>,
    pub refined: Option<ScoreMap>,
    pub candidates: Option<CandidateSet>,
    pub head: HeadOutput,
    /// The decode failed and the previous box was kept.
    pub fallback: bool,
    pub ref_updated: bool,
    pub tem_updated: bool,
}

/// Search-region crop around `last_box`, resized to the model resolution.
pub fn crop_search_region(
    frame: &Frame,
    last_box: &BoundingBox,
    scale_factor: f64,
    resolution: usize,
) -> Result<(Frame, SearchRegion)> {
    let region = SearchRegion::around(last_box, scale_factor, resolution)?;
    Ok((frame.crop_region(&region), region))
}

pub struct Tracker<'m> {
    pub model: &'m PivotModel,
    pub config: TrackerConfig,
}

impl<'m> Tracker<'m> {
    pub fn new(model: &'m PivotModel, config: TrackerConfig) -> Result<Self> {
        config.tpr_params.validate()?;
        Ok(Self { model, config })
    }

    pub fn initialize(&self, frame: &Frame, b: &BoundingBox) -> Result<TrackState> {
        if !b.is_valid() || b.intersect_frame(frame.width as f64, frame.height as f64).is_none() {
            return Err(Error::InvalidBox { x: b.x, y: b.y, w: b.w, h: b.h });
        }
        let m = self.model;
        let (patch, region) = crop_search_region(frame, b, m.config.scale_factor, m.resolution())?;
        let v = m.encode_patch(&patch)?;
        let y = m.label(b, &region);
        let tem = (m.template_feature(frame, b)?, m.embed(frame, b)?);
        Ok(TrackState {
            ref1: (v.clone(), y.clone()),
            ref2: (v, y),
            tem1: tem.clone(),
            tem2: tem,
            last_d: None,
            last_box: *b,
            frame_index: 0,
            last_ref_update: 0,
            initial_size: (b.w, b.h),
        })
    }

    fn refine(&self, state: &TrackState, frame: &Frame, h_can: &ScoreMap, region: &SearchRegion) -> (ScoreMap, CandidateSet) {
        let cfg = &self.config.tpr_params;
        let points = extract_candidates(h_can, cfg);
        let (boxes, fallback) =
            retrieve_candidate_boxes(&points, state.last_d.as_ref(), region, self.model.grid(), state.initial_size);
        let mut set = CandidateSet {
            points: Vec::new(),
            scores: Vec::new(),
            boxes: Vec::new(),
            embeddings: Vec::new(),
            importance: Vec::new(),
            boxes_from_fallback: fallback,
        };
        for (p, b) in points.into_iter().zip(boxes) {
            // candidates whose crop is degenerate drop out of the softmax
            if let Ok(e) = self.model.embed(frame, &b) {
                set.scores.push(h_can.get(p));
                set.points.push(p);
                set.boxes.push(b);
                set.embeddings.push(e);
            }
        }
        set.importance = importance_scores(&set.embeddings, [&state.tem1.1, &state.tem2.1]);
        (refine_prompt(h_can, &set.points, &set.importance, cfg), set)
    }

    /// Tracks one frame and updates `state`. Never fails on degenerate
    /// predictions: those keep the previous box with confidence 0.
    pub fn track_frame(&self, state: &mut TrackState, frame: &Frame) -> Result<FrameOutput> {
        let m = self.model;
        let (patch, region) = crop_search_region(frame, &state.last_box, m.config.scale_factor, m.resolution())?;
        let v_cur = m.encode_patch(&patch)?;
        let mode = self.config.mode();
        let (h_can, refined, candidates, v_cur_p) = match mode {
            PromptMode::Off => (None, None, None, v_cur.clone()),
            PromptMode::Initial => {
                let h = m.prompt(&state.tem1.0, &state.tem2.0, &v_cur)?;
                let vp = m.relate(&h, &v_cur)?;
                (Some(h), None, None, vp)
            }
            PromptMode::Refined => {
                let h = m.prompt(&state.tem1.0, &state.tem2.0, &v_cur)?;
                let (r, set) = self.refine(state, frame, &h, &region);
                let vp = m.relate(&r, &v_cur)?;
                (Some(h), Some(r), Some(set), vp)
            }
        };
        let head = m.predict((&state.ref1.0, &state.ref1.1), (&state.ref2.0, &state.ref2.1), &v_cur_p)?;
        let (decoded, score) = decode_prediction(&head.h_cls, &head.d, &region);
        let (fw, fh) = (frame.width as f64, frame.height as f64);
        let usable = !decoded.degenerate
            && score.is_finite()
            && decoded.bbox.intersect_frame(fw, fh).is_some_and(|b| b.w >= 1.0 && b.h >= 1.0);
        let (bbox, confidence) = if usable { (decoded.bbox.clamp_to_frame(fw, fh), score) } else { (state.last_box, 0.0) };

        state.frame_index += 1;
        let ref_updated = usable && self.update_reference(state, &v_cur, &region, &bbox, confidence);
        let tem_updated = usable && self.update_template(state, frame, &bbox)?;
        state.last_d = Some(head.d.clone());
        state.last_box = bbox;
        Ok(FrameOutput {
            bbox,
            confidence,
            region,
            h_can,
            refined,
            candidates,
            head,
            fallback: !usable,
            ref_updated,
            tem_updated,
        })
    }

    /// Replaces the second reference when the peak is confident enough and
    /// the last update is at least `min_update_gap` frames old.
    pub fn update_reference(
        &self,
        state: &mut TrackState,
        v_cur: &FeatureGrid,
        region: &SearchRegion,
        bbox: &BoundingBox,
        confidence: f64,
    ) -> bool {
        if confidence < self.config.update_threshold
            || state.frame_index < state.last_ref_update + self.config.min_update_gap
        {
            return false;
        }
        state.ref2 = (v_cur.clone(), self.model.label(bbox, region));
        state.last_ref_update = state.frame_index;
        true
    }

    /// Replaces the second template when the new crop is strictly more
    /// similar to the first template than the current second template is.
    pub fn update_template(&self, state: &mut TrackState, frame: &Frame, bbox: &BoundingBox) -> Result<bool> {
        let Ok(e_new) = self.model.embed(frame, bbox) else { return Ok(false) };
        if e_new.cosine(&state.tem1.1) > state.tem2.1.cosine(&state.tem1.1) {
            let Ok(feat) = self.model.template_feature(frame, bbox) else { return Ok(false) };
            state.tem2 = (feat, e_new);
            return Ok(true);
        }
        Ok(false)
    }
}

/// Per-frame boxes and confidences of one tracked sequence. Frame 0 holds
/// the initialization box.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRun {
    pub boxes: Vec<BoundingBox>,
    pub confidences: Vec<f64>,
}

/// One-pass tracking of a whole sequence from its first ground-truth box.
pub fn track_sequence(model: &PivotModel, config: &TrackerConfig, seq: &SequenceRecord) -> Result<TrackRun> {
    seq.validate()?;
    let tracker = Tracker::new(model, *config)?;
    let first = seq.frame(0)?;
    let mut state = tracker.initialize(&first, &seq.boxes[0])?;
    let mut run = TrackRun { boxes: vec![seq.boxes[0]], confidences: vec![1.0] };
    for i in 1..seq.len() {
        let frame = seq.frame(i)?;
        match tracker.track_frame(&mut state, &frame) {
            Ok(out) => {
                run.boxes.push(out.bbox);
                run.confidences.push(out.confidence);
            }
            Err(e) => {
                log::warn!("{} frame {i}: {e}; keeping the previous box", seq.name);
                run.boxes.push(state.last_box);
                run.confidences.push(0.0);
                state.frame_index += 1;
            }
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_suite, SuiteConfig, SuiteKind};
    use crate::model::ModelConfig;

    fn sequence() -> SequenceRecord {
        let cfg = SuiteConfig { sequences: 1, length: 14, ..SuiteConfig::default() };
        make_suite(SuiteKind::Distractor, &cfg).unwrap().remove(0)
    }

    fn run(model: &PivotModel, config: TrackerConfig, seq: &SequenceRecord) -> (TrackState, Vec<FrameOutput>) {
        let tracker = Tracker::new(model, config).unwrap();
        let mut state = tracker.initialize(&seq.frame(0).unwrap(), &seq.boxes[0]).unwrap();
        let outs = (1..seq.len()).map(|i| tracker.track_frame(&mut state, &seq.frame(i).unwrap()).unwrap()).collect();
        (state, outs)
    }

    #[test]
    fn first_frame_references_never_change() {
        let model = PivotModel::new(ModelConfig::default()).unwrap();
        let seq = sequence();
        // permissive gates so the second reference and template do update
        let mut config = TrackerConfig { update_threshold: f64::NEG_INFINITY, min_update_gap: 1, ..Default::default() };
        config.tpr_params.gamma = 0.0;
        let tracker = Tracker::new(&model, config).unwrap();
        let init = tracker.initialize(&seq.frame(0).unwrap(), &seq.boxes[0]).unwrap();
        let (state, outs) = run(&model, config, &seq);
        assert!(outs.iter().any(|o| o.ref_updated));
        assert_eq!(state.ref1, init.ref1);
        assert_eq!(state.tem1, init.tem1);
        assert_eq!(state.frame_index, seq.len() - 1);
        // fixed-size state: the replaced reference keeps the first one's shape
        assert_eq!((state.ref2.0.h, state.ref2.0.w, state.ref2.0.c), (init.ref1.0.h, init.ref1.0.w, init.ref1.0.c));
    }

    #[test]
    fn tracking_is_deterministic() {
        let model = PivotModel::new(ModelConfig::default()).unwrap();
        let seq = sequence();
        let (a, oa) = run(&model, TrackerConfig::default(), &seq);
        let (b, ob) = run(&model, TrackerConfig::default(), &seq);
        assert_eq!(a, b);
        for (x, y) in oa.iter().zip(&ob) {
            assert_eq!(x.bbox, y.bbox);
            assert_eq!(x.confidence.to_bits(), y.confidence.to_bits());
            assert_eq!(x.head.h_cls, y.head.h_cls);
        }
    }

    #[test]
    fn modes_follow_flags() {
        let model = PivotModel::new(ModelConfig::default()).unwrap();
        let seq = sequence();
        for (mode, prompt, refined) in
            [(PromptMode::Off, false, false), (PromptMode::Initial, true, false), (PromptMode::Refined, true, true)]
        {
            let (_, outs) = run(&model, TrackerConfig::default().with_mode(mode), &seq);
            assert!(outs.iter().all(|o| o.h_can.is_some() == prompt && o.refined.is_some() == refined));
        }
    }
}
