//! Tracks one synthetic distractor sequence frame by frame and prints the
//! per-frame overlap, confidence and update events.
//!
//! ```text
//! cargo run --release --example track_synthetic -- [checkpoint]
//! ```

mod common;

use std::path::PathBuf;

use pivot::data::{make_suite, SuiteConfig, SuiteKind};
use pivot::geometry::iou;
use pivot::pipeline::{Tracker, TrackerConfig};

fn main() -> pivot::Result<()> {
    let ckpt = std::env::args().nth(1).map(PathBuf::from);
    let model = common::model_from(ckpt.as_deref())?;
    let cfg = SuiteConfig { master_seed: 9001, sequences: 1, ..SuiteConfig::default() };
    let seq = make_suite(SuiteKind::Distractor, &cfg)?.remove(0);
    let tracker = Tracker::new(&model, TrackerConfig::default())?;
    let mut state = tracker.initialize(&seq.frame(0)?, &seq.boxes[0])?;
    let mut total = 0.0;
    for i in 1..seq.len() {
        let out = tracker.track_frame(&mut state, &seq.frame(i)?)?;
        let overlap = iou(&out.bbox, &seq.boxes[i]);
        total += overlap;
        let cands = out.candidates.as_ref().map_or(0, |c| c.len());
        let accepted = out.candidates.as_ref().map_or(0, |c| c.accepted(tracker.config.tpr_params.gamma).count());
        println!(
            "frame {i:>3}  iou {overlap:.2}  conf {:.2}  candidates {cands} accepted {accepted}{}{}",
            out.confidence,
            if out.ref_updated { "  ref2 updated" } else { "" },
            if out.tem_updated { "  tem2 updated" } else { "" },
        );
    }
    println!("{}: mean IoU {:.3}", seq.name, total / (seq.len() - 1) as f64);
    Ok(())
}
