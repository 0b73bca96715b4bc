//! Two-stage desk-scale training on the synthetic `plain` suite.
//!
//! Stage 1 trains the adapter and tracking head with the prompting modules
//! frozen; stage 2 trains the prompt generator and relation module with the
//! tracker nearly frozen. Both checkpoints are written to `out_dir`.
//!
//! ```text
//! cargo run --release --example train_desk -- [samples_per_epoch] [out_dir]
//! ```

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use pivot::checkpoint::Checkpoint;
use pivot::config::RunConfig;
use pivot::data::{make_suite, SuiteKind};
use pivot::model::PivotModel;
use pivot::training::{run_stage, TrainData};

/// Mean loss of consecutive blocks of `n` steps.
fn block_means(losses: &[f64], n: usize) -> Vec<f64> {
    losses.chunks(n).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

fn main() -> pivot::Result<()> {
    let mut args = std::env::args().skip(1);
    let samples: usize = args.next().map(|s| s.parse().expect("samples_per_epoch")).unwrap_or(200);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("pivot-train"));
    std::fs::create_dir_all(&out)?;

    let mut cfg = RunConfig::default();
    cfg.train.stage1.samples_per_epoch = samples;
    cfg.train.stage2.samples_per_epoch = samples;
    let hash = cfg.hash();
    let seqs = make_suite(SuiteKind::Plain, &cfg.data.suite)?;
    let data = TrainData { sequences: &seqs, frame_size: (cfg.data.suite.width, cfg.data.suite.height) };

    let mut model = PivotModel::new(cfg.model.clone())?;
    println!("{} trainable scalars, config {hash}", model.store.count_scalars());
    let mut log = std::fs::File::create(out.join("train_log.txt"))?;
    for stage in [1, 2] {
        let t = Instant::now();
        let outcome = run_stage(model, stage, &data, &cfg.train, &cfg.loss, &mut log)?;
        let losses: Vec<f64> = outcome.records.iter().map(|r| r.loss.total).collect();
        let blocks = block_means(&losses, (losses.len() / 8).max(1));
        println!(
            "stage {stage}: {} steps in {:.0?}, loss by block {}",
            losses.len(),
            t.elapsed(),
            blocks.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ")
        );
        if let Some(step) = outcome.diverged_at {
            println!("stage {stage} diverged at step {step}; kept the last finite parameters");
        }
        model = outcome.model;
        let path = out.join(format!("stage{stage}.ckpt"));
        Checkpoint::from_model(&model, &hash, stage).save(&path)?;
        println!("wrote {}", path.display());
    }
    log.flush()?;
    Ok(())
}
