//! Sequences, dataset layouts and the synthetic scene generator.

mod loaders;
mod suites;
mod synth;

use std::path::PathBuf;
use std::sync::Arc;

pub use loaders::{load_dataset, parse_box_line, write_sequence, DatasetLoad, Layout, SequenceError};
pub use suites::{load_suite, make_suite, make_suites, materialize_suite, SuiteConfig, SuiteKind, SUITE_NAMES};
pub use synth::{
    generate_still, generate_synthetic, DeformSpec, DistractorDesc, MotionModel, ObjectDesc, OcclusionEvent,
    ShapeKind, SynthScene, SynthSpec,
};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::image::Frame;

/// Where a sequence's frames come from.
#[derive(Debug, Clone)]
pub enum FrameSource {
    Paths(Vec<PathBuf>),
    Memory(Arc<Vec<Frame>>),
    /// Rendered on demand from a synthetic scene.
    Synthetic(Arc<SynthScene>),
}

#[derive(Debug, Clone)]
pub struct SequenceRecord {
    pub name: String,
    pub frames: FrameSource,
    /// Ground truth per frame; boxes of absent frames may be degenerate.
    pub boxes: Vec<BoundingBox>,
    pub visible: Vec<bool>,
    pub attributes: Vec<String>,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn frame_count(&self) -> usize {
        match &self.frames {
            FrameSource::Paths(p) => p.len(),
            FrameSource::Memory(f) => f.len(),
            FrameSource::Synthetic(s) => s.len(),
        }
    }

    pub fn frame(&self, i: usize) -> Result<Frame> {
        match &self.frames {
            FrameSource::Paths(p) => Frame::load(&p[i]),
            FrameSource::Memory(f) => Ok(f[i].clone()),
            FrameSource::Synthetic(s) => Ok(s.render(i)),
        }
    }

    /// Checks the record invariants: one box per frame, matching flag
    /// count, and a valid first box.
    pub fn validate(&self) -> Result<()> {
        if self.frame_count() != self.boxes.len() {
            return Err(Error::Precondition(format!(
                "sequence `{}`: {} frames but {} boxes",
                self.name,
                self.frame_count(),
                self.boxes.len()
            )));
        }
        if self.visible.len() != self.boxes.len() {
            return Err(Error::Precondition(format!("sequence `{}`: visibility flag count mismatch", self.name)));
        }
        match self.boxes.first() {
            Some(b) if b.is_valid() => Ok(()),
            _ => Err(Error::Precondition(format!("sequence `{}`: first box is missing or invalid", self.name))),
        }
    }

    pub fn has_attribute(&self, tag: &str) -> bool {
        self.attributes.iter().any(|a| a == tag)
    }
}
