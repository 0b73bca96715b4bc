//! Generates the four synthetic suites, writes them in the GOT-10k style
//! layout and reads them back through the dataset loader.
//!
//! ```text
//! cargo run --release --example synth_suites -- [out_dir]
//! ```

use std::path::PathBuf;

use pivot::data::{load_suite, make_suites, materialize_suite, FrameSource, SuiteConfig};
use pivot::geometry::iou;

fn main() -> pivot::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("pivot-suites"));
    let cfg = SuiteConfig { sequences: 4, length: 40, ..SuiteConfig::default() };
    for (kind, seqs) in make_suites(&cfg)? {
        let dir = out.join(kind.name());
        materialize_suite(&dir, kind, &cfg, &seqs)?;
        let loaded = load_suite(&dir)?;
        println!("{kind:<10} {} sequences written, {} read back, {} load errors", seqs.len(), loaded.sequences.len(), loaded.errors.len());
        for s in &seqs {
            let hidden = s.visible.iter().filter(|v| !**v).count();
            let closest = match &s.frames {
                FrameSource::Synthetic(scene) => scene
                    .distractor_boxes()
                    .iter()
                    .map(|d| (0..s.len()).map(|t| iou(&d[t], &s.boxes[t])).fold(0.0, f64::max))
                    .fold(0.0, f64::max),
                _ => 0.0,
            };
            println!("  {:<16} frames {:>3}  hidden {:>2}  max distractor overlap {closest:.2}  tags {}", s.name, s.len(), hidden, s.attributes.join(","));
        }
    }
    println!("suites under {}", out.display());
    Ok(())
}
