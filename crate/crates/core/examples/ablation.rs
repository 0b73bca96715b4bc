//! Prompt ablation on the distractor and plain suites: a static baseline
//! plus the tracker without a prompt, with the generated prompt and with
//! the refined prompt.
//!
//! ```text
//! cargo run --release --example ablation -- [checkpoint]
//! ```

mod common;

use std::path::PathBuf;

use pivot::commands::{ablation_rows, format_ablation};
use pivot::config::RunConfig;
use pivot::data::{make_suite, SuiteKind};

fn main() -> pivot::Result<()> {
    let ckpt = std::env::args().nth(1).map(PathBuf::from);
    let model = common::model_from(ckpt.as_deref())?;
    let cfg = RunConfig::default();
    let mut suite = cfg.data.suite.clone();
    suite.master_seed = cfg.data.eval_seed;
    suite.sequences = 8;
    for kind in [SuiteKind::Distractor, SuiteKind::Plain] {
        let seqs = make_suite(kind, &suite)?;
        let rows = ablation_rows(std::slice::from_ref(&model), &cfg.tracker, &seqs, &cfg.eval, 1)?;
        println!("== {kind}");
        print!("{}", format_ablation(&rows, &[cfg.hash()]));
    }
    Ok(())
}
