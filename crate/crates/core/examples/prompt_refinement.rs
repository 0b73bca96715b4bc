//! Test-time prompt refinement on one frame where a look-alike distractor
//! is close to the target: candidate extraction from the generated prompt,
//! embedding-based importance scores, and the refined prompt.
//!
//! ```text
//! cargo run --release --example prompt_refinement -- [checkpoint]
//! ```

mod common;

use std::path::PathBuf;

use pivot::data::{make_suite, FrameSource, SuiteConfig, SuiteKind};
use pivot::geometry::{iou, BoundingBox, GridPoint};
use pivot::grid::ScoreMap;
use pivot::pipeline::{Tracker, TrackerConfig};

fn print_map(title: &str, m: &ScoreMap) {
    println!("{title}");
    for y in 0..m.h {
        let row: Vec<String> = (0..m.w).map(|x| format!("{:5.2}", m.get(GridPoint::new(y, x)))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> pivot::Result<()> {
    let ckpt = std::env::args().nth(1).map(PathBuf::from);
    let model = common::model_from(ckpt.as_deref())?;
    let cfg = SuiteConfig { master_seed: 9001, sequences: 3, ..SuiteConfig::default() };
    let tracker = Tracker::new(&model, TrackerConfig::default())?;
    let gamma = tracker.config.tpr_params.gamma;

    for seq in make_suite(SuiteKind::Distractor, &cfg)? {
        let FrameSource::Synthetic(scene) = &seq.frames else { unreachable!() };
        let distractors = scene.distractor_boxes();
        let near = |t: usize| {
            let b = seq.boxes[t];
            let (cx, cy) = b.center();
            let around = BoundingBox::from_center(cx, cy, b.w * 2.5, b.h * 2.5);
            distractors.iter().any(|d| iou(&d[t], &around) > 0.0)
        };
        let Some(frame_idx) = (1..seq.len()).find(|&t| near(t) && seq.visible[t]) else { continue };

        let mut state = tracker.initialize(&seq.frame(0)?, &seq.boxes[0])?;
        let mut out = None;
        for i in 1..=frame_idx {
            out = Some(tracker.track_frame(&mut state, &seq.frame(i)?)?);
        }
        let out = out.expect("at least one frame tracked");
        println!("{} frame {frame_idx}: target {:?}", seq.name, seq.boxes[frame_idx]);
        print_map("generated prompt h_can", out.h_can.as_ref().expect("prompting on"));
        let cands = out.candidates.as_ref().expect("refinement on");
        for k in 0..cands.len() {
            let b = cands.boxes[k];
            let what = if iou(&b, &seq.boxes[frame_idx]) > 0.3 {
                "target"
            } else if distractors.iter().any(|d| iou(&b, &d[frame_idx]) > 0.3) {
                "distractor"
            } else {
                "other"
            };
            println!(
                "  candidate ({:>2},{:>2}) score {:.2} importance {:.3} {:<8} -> {}",
                cands.points[k].row,
                cands.points[k].col,
                cands.scores[k],
                cands.importance[k],
                what,
                if cands.importance[k] > gamma { "set to 1" } else { "unchanged" }
            );
        }
        print_map("refined prompt", out.refined.as_ref().expect("refinement on"));
        println!("tracked box {:?}, IoU {:.2}", out.bbox, iou(&out.bbox, &seq.boxes[frame_idx]));
        return Ok(());
    }
    println!("no frame with a nearby distractor in these sequences");
    Ok(())
}
