//! One-pass evaluation of raw result files: a jittered copy of the ground
//! truth is written in the standard `x,y,w,h` format, read back and scored,
//! with per-attribute breakdowns in a plot-ready table.
//!
//! ```text
//! cargo run --release --example evaluate_results
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pivot::data::{make_suite, write_sequence, SuiteConfig, SuiteKind};
use pivot::evalkit::{attribute_report, attribute_table, results_from_files, write_result_file, EvalConfig, MetricReport};
use pivot::geometry::BoundingBox;

fn main() -> pivot::Result<()> {
    let dir = tempfile_dir("pivot-eval");
    let cfg = SuiteConfig { sequences: 3, length: 30, ..SuiteConfig::default() };
    let mut seqs = make_suite(SuiteKind::Plain, &cfg)?;
    seqs.extend(make_suite(SuiteKind::Occlusion, &cfg)?);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, s) in seqs.iter().enumerate() {
        write_sequence(s, &dir.join("data").join(&s.name))?;
        // later sequences drift further from the truth
        let noise = 1.0 + 2.0 * k as f64;
        let pred: Vec<BoundingBox> = s
            .boxes
            .iter()
            .map(|b| BoundingBox { x: b.x + rng.gen_range(-noise..noise), y: b.y + rng.gen_range(-noise..noise), ..*b })
            .collect();
        write_result_file(&dir.join("results").join(format!("{}.txt", s.name)), &pred, Some("example"))?;
    }

    let eval = EvalConfig::default();
    let (results, errors) = results_from_files(&dir.join("results"), &seqs);
    assert!(errors.is_empty(), "{errors:?}");
    let report = MetricReport::compute(&results, &eval);
    print!("{}", report.to_text("example"));
    println!();
    print!("{}", attribute_table(&attribute_report(&results, None, &eval)));
    Ok(())
}

fn tempfile_dir(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(name);
    std::fs::create_dir_all(d.join("results")).expect("temp dir");
    d
}
