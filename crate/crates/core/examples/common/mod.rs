use std::path::Path;

use pivot::checkpoint::Checkpoint;
use pivot::config::RunConfig;
use pivot::data::{make_suite, SuiteKind};
use pivot::model::PivotModel;
use pivot::training::{run_training, TrainData};

/// Loads `path` when given, otherwise trains a small model (about a
/// minute on one core) on the `plain` suite.
pub fn model_from(path: Option<&Path>) -> pivot::Result<PivotModel> {
    if let Some(p) = path {
        return Checkpoint::load(p)?.into_model();
    }
    eprintln!("no checkpoint given, training a small model first");
    let mut cfg = RunConfig::default();
    cfg.train.stage1.samples_per_epoch = 150;
    cfg.train.stage2.samples_per_epoch = 150;
    let seqs = make_suite(SuiteKind::Plain, &cfg.data.suite)?;
    let data = TrainData { sequences: &seqs, frame_size: (cfg.data.suite.width, cfg.data.suite.height) };
    let out = run_training(PivotModel::new(cfg.model.clone())?, &data, &cfg.train, &cfg.loss, &mut std::io::sink())?;
    Ok(out.model)
}
