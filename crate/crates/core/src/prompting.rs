//! Prompt generation (PGN) and relation modeling (RM).
//!
//! The PGN reads the two template grids and the current-frame grid,
//! concatenated along channels, and produces a single-channel prompt whose
//! peaks mark likely target centers. The RM concatenates that prompt with
//! the current features and returns a prompted feature grid of the same
//! shape; a residual path from the input features lets it fall back to the
//! identity when the prompt carries no information.

use rand::Rng;

use crate::autograd::{Tape, Tensor, Var};
use crate::encoders::{Adapter, FrameBackbone};
use crate::error::{shape_err, Error, Result};
use crate::geometry::BoundingBox;
use crate::grid::{FeatureGrid, ScoreMap};
use crate::image::Frame;
use crate::nn::{Conv3x3, ConvBlock};
use crate::params::{ParamGroup, ParamStore};

pub(crate) fn grid_var(tape: &mut Tape, g: &FeatureGrid) -> Var {
    tape.constant(Tensor::new(g.h * g.w, g.c, g.values.clone()))
}

#[derive(Debug, Clone, Copy)]
pub struct Pgn {
    pub block1: ConvBlock,
    pub block2: ConvBlock,
    pub out: Conv3x3,
    pub channels: usize,
}

impl Pgn {
    pub fn new(store: &mut ParamStore, channels: usize, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Prompting;
        let half = (channels / 2).max(1);
        Self {
            block1: ConvBlock::new(store, "pgn.block1", g, 3 * channels, channels, rng),
            block2: ConvBlock::new(store, "pgn.block2", g, channels, half, rng),
            out: Conv3x3::new(store, "pgn.out", g, half, 1, 0.1, rng),
            channels,
        }
    }

    /// Prompt logits `[h*w, 1]` from three `[h*w, C]` grids.
    pub fn graph(&self, tape: &mut Tape, store: &ParamStore, tem1: Var, tem2: Var, cur: Var, h: usize, w: usize) -> Var {
        let x = tape.concat_cols(&[tem1, tem2, cur]);
        let x = self.block1.forward(tape, store, x, h, w);
        let x = self.block2.forward(tape, store, x, h, w);
        self.out.forward(tape, store, x, h, w)
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        v_tem1: &FeatureGrid,
        v_tem2: &FeatureGrid,
        v_cur: &FeatureGrid,
    ) -> Result<ScoreMap> {
        v_cur.check_same_shape(v_tem1, "pgn template 1")?;
        v_cur.check_same_shape(v_tem2, "pgn template 2")?;
        if v_cur.c != self.channels {
            return shape_err(format!("pgn built for {} channels, got {}", self.channels, v_cur.c));
        }
        let mut tape = Tape::new();
        let t1 = grid_var(&mut tape, v_tem1);
        let t2 = grid_var(&mut tape, v_tem2);
        let c = grid_var(&mut tape, v_cur);
        let out = self.graph(&mut tape, store, t1, t2, c, v_cur.h, v_cur.w);
        ScoreMap::new(v_cur.h, v_cur.w, v_cur.stride, tape.value(out).data.clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RelationModel {
    pub block1: ConvBlock,
    pub block2: ConvBlock,
    pub channels: usize,
}

impl RelationModel {
    pub fn new(store: &mut ParamStore, channels: usize, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Prompting;
        let block1 = ConvBlock::new(store, "rm.block1", g, channels + 1, channels, rng);
        let block2 = ConvBlock::new(store, "rm.block2", g, channels, channels, rng);
        // start close to the identity through the residual path
        store.value_mut(block2.norm.gamma).data.fill(0.1);
        Self { block1, block2, channels }
    }

    /// Prompted features `[h*w, C]` from a `[h*w, 1]` prompt and `[h*w, C]`
    /// features.
    pub fn graph(&self, tape: &mut Tape, store: &ParamStore, prompt: Var, cur: Var, h: usize, w: usize) -> Var {
        assert_eq!(tape.value(prompt).cols, 1, "relation modeling takes a single prompt channel");
        let x = tape.concat_cols(&[prompt, cur]);
        let x = self.block1.forward(tape, store, x, h, w);
        let x = self.block2.forward(tape, store, x, h, w);
        tape.add(cur, x)
    }

    pub fn forward(&self, store: &ParamStore, h_can: &ScoreMap, v_cur: &FeatureGrid) -> Result<FeatureGrid> {
        if h_can.h != v_cur.h || h_can.w != v_cur.w {
            return shape_err(format!(
                "relation modeling: prompt {}x{} vs features {}x{}",
                h_can.h, h_can.w, v_cur.h, v_cur.w
            ));
        }
        if v_cur.c != self.channels {
            return shape_err(format!("relation modeling built for {} channels, got {}", self.channels, v_cur.c));
        }
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(h_can.h * h_can.w, 1, h_can.values.clone()));
        let c = grid_var(&mut tape, v_cur);
        let out = self.graph(&mut tape, store, p, c, v_cur.h, v_cur.w);
        FeatureGrid::new(v_cur.h, v_cur.w, v_cur.c, v_cur.stride, tape.value(out).data.clone())
    }
}

/// Crops exactly `b` (clipped to the frame), resizes it to the backbone
/// resolution and encodes it through the adapter.
pub fn extract_template_feature(
    backbone: &dyn FrameBackbone,
    adapter: &Adapter,
    store: &ParamStore,
    frame: &Frame,
    b: &BoundingBox,
) -> Result<FeatureGrid> {
    if !b.is_valid() {
        return Err(Error::InvalidBox { x: b.x, y: b.y, w: b.w, h: b.h });
    }
    let crop = frame.crop_box(b, backbone.spec().input_resolution)?;
    let raw = backbone.encode(&crop)?;
    Ok(adapter.apply(store, &raw))
}
