//! Labels, losses, sampling and the two-stage optimization loop.
//!
//! Stage 1 trains the adapter and tracking head alone (the prompt term of
//! the objective is off and PGN/RM are not in the graph). Stage 2 adds
//! PGN and RM and trains everything with two learning-rate groups.

pub mod labels;
pub mod losses;
pub mod optim;
pub mod sampler;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::data::{generate_still, SequenceRecord};
use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::head::HeadVars;
use crate::model::PivotModel;
use crate::prompting::grid_var;

pub use labels::{make_gaussian_label, LabelPair};
pub use losses::{classification_loss, regression_loss, total_loss, LossBreakdown, LossWeights, FG_THRESHOLD};
pub use optim::{AdamW, AdamWConfig, StageSchedule};
pub use sampler::{build_sample, sample_subsequence, AugmentConfig, TrainingSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1: StageSchedule,
    pub stage2: StageSchedule,
    pub batch_size: usize,
    /// Frames spanned by one sampled triple.
    pub window: usize,
    pub augment: AugmentConfig,
    pub optimizer: AdamWConfig,
    /// Chance that a sample is drawn from a synthetic still instead of a
    /// sequence.
    pub still_probability: f64,
    /// Upper bound on the extra objects placed in a still.
    pub still_objects: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Desk-scale preset: 10 + 6 epochs of 1000 samples with stage-1 decay at
    /// epochs 5 and 8 and a 1:1250 tracker/prompting learning-rate ratio.
    pub fn desk() -> Self {
        Self {
            stage1: StageSchedule {
                epochs: 10,
                samples_per_epoch: 1000,
                tracker_lr: 1e-4,
                prompt_lr: 0.0,
                lr_scale: 10.0,
                decay_factor: 0.2,
                decay_epochs: vec![5, 8],
            },
            stage2: StageSchedule {
                epochs: 6,
                samples_per_epoch: 1000,
                tracker_lr: 4e-6,
                prompt_lr: 5e-3,
                lr_scale: 0.2,
                decay_factor: 0.2,
                decay_epochs: vec![4],
            },
            batch_size: 8,
            window: 200,
            augment: AugmentConfig::default(),
            optimizer: AdamWConfig::default(),
            still_probability: 0.1,
            still_objects: 3,
            seed: 7,
        }
    }

    pub fn schedule(&self, stage: u32) -> &StageSchedule {
        if stage == 1 {
            &self.stage1
        } else {
            &self.stage2
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.batch_size == 0 || self.window < 3 || !(0.0..=1.0).contains(&self.still_probability) {
            return Err(Error::Config("batch_size > 0, window >= 3 and still_probability in [0, 1] required".into()));
        }
        Ok(())
    }
}

/// One line of training progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: u32,
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub tracker_lr: f64,
    pub prompt_lr: f64,
}

impl StepRecord {
    /// `key=value` pairs separated by spaces.
    pub fn to_line(&self) -> String {
        format!(
            "stage={} step={} epoch={} loss={:.6} cls={:.6} can={:.6} reg={:.6} lr_tracker={:.3e} lr_prompt={:.3e}",
            self.stage,
            self.step,
            self.epoch,
            self.loss.total,
            self.loss.cls,
            self.loss.can,
            self.loss.reg,
            self.tracker_lr,
            self.prompt_lr
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model after the last step with a finite loss.
    pub model: PivotModel,
    pub records: Vec<StepRecord>,
    /// Step at which a non-finite loss stopped training.
    pub diverged_at: Option<usize>,
}

fn adapted(tape: &mut Tape, model: &PivotModel, g: &FeatureGrid) -> Var {
    let x = grid_var(tape, g);
    model.adapter.lin.forward(tape, &model.store, x)
}

/// Loss graph of one sample; returns the total and its three components.
pub fn sample_graph(
    tape: &mut Tape,
    model: &PivotModel,
    s: &TrainingSample,
    stage: u32,
    w: &LossWeights,
) -> (Var, [Var; 3], HeadVars) {
    let store = &model.store;
    let (h, wd) = model.grid();
    let r1 = adapted(tape, model, &s.refs[0].0);
    let r2 = adapted(tape, model, &s.refs[1].0);
    let cur = adapted(tape, model, &s.cur);
    let (cur_p, h_can) = if stage >= 2 {
        let t1 = adapted(tape, model, &s.templates[0]);
        let t2 = adapted(tape, model, &s.templates[1]);
        let h_can = model.pgn.graph(tape, store, t1, t2, cur, h, wd);
        (model.rm.graph(tape, store, h_can, cur, h, wd), Some(h_can))
    } else {
        (cur, None)
    };
    let vars = model.head.graph(tape, store, r1, &s.refs[0].1, r2, &s.refs[1].1, cur_p);
    let label = &s.label;
    let l_cls = tape.hinge_loss(vars.h_cls, &label.cls.values, FG_THRESHOLD);
    let l_can = match h_can {
        Some(p) => tape.hinge_loss(p, &label.cls.values, FG_THRESHOLD),
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let l_reg = tape.giou_loss(vars.d, &label.reg.values, &label.reg.mask);
    let a = tape.scale(l_cls, w.lambda_cls);
    let lambda_can = if stage >= 2 { w.lambda_can } else { 0.0 };
    let b = tape.scale(l_can, lambda_can);
    let c = tape.scale(l_reg, w.lambda_reg);
    let ab = tape.add(a, b);
    let total = tape.add(ab, c);
    (total, [l_cls, l_can, l_reg], vars)
}

/// Training sequences plus the still-image stand-in.
pub struct TrainData<'a> {
    pub sequences: &'a [SequenceRecord],
    pub frame_size: (usize, usize),
}

fn draw_sample(
    model: &PivotModel,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingSample> {
    for _ in 0..64 {
        if data.sequences.is_empty() || rng.gen_bool(cfg.still_probability) {
            let others = rng.gen_range(0..=cfg.still_objects);
            let still = generate_still(rng.gen(), data.frame_size.0, data.frame_size.1, others)?;
            return build_sample(model, &still, [0, 0, 0], &cfg.augment, rng);
        }
        let seq = &data.sequences[rng.gen_range(0..data.sequences.len())];
        let Some(idx) = sample_subsequence(seq.len(), cfg.window, rng) else { continue };
        if idx.iter().all(|&i| seq.visible[i] && seq.boxes[i].is_valid()) {
            return build_sample(model, seq, idx, &cfg.augment, rng);
        }
    }
    Err(Error::Precondition("could not draw a training sample with a visible target".into()))
}

/// Runs one training stage on `model`. Stage 2 expects a model that went
/// through stage 1. One progress line per step goes to `log`.
pub fn run_stage(
    mut model: PivotModel,
    stage: u32,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    weights: &LossWeights,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    if !(1..=2).contains(&stage) {
        return Err(Error::Config(format!("stage must be 1 or 2, got {stage}")));
    }
    cfg.validate()?;
    weights.validate()?;
    let sched = cfg.schedule(stage).clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (stage as u64).wrapping_mul(0x9e37_79b9));
    let mut opt = AdamW::new(&model.store, cfg.optimizer);
    let steps_per_epoch = sched.samples_per_epoch.div_ceil(cfg.batch_size);
    let n_params = model.store.len();
    let mut records = Vec::new();
    let mut last_good = model.store.clone();
    let mut step = 0;
    for epoch in 0..sched.epochs {
        let rate = |g| if stage == 1 && g == crate::params::ParamGroup::Prompting { 0.0 } else { sched.rate(g, epoch) };
        for _ in 0..steps_per_epoch {
            let mut acc: Vec<Option<Tensor>> = (0..n_params).map(|_| None).collect();
            let mut sum = LossBreakdown::default();
            for _ in 0..cfg.batch_size {
                let sample = draw_sample(&model, data, cfg, &mut rng)?;
                let mut tape = Tape::new();
                let (total, parts, _) = sample_graph(&mut tape, &model, &sample, stage, weights);
                let grads = tape.backward(total);
                for (slot, g) in acc.iter_mut().zip(tape.param_grads(&grads, n_params)) {
                    match (slot.as_mut(), g) {
                        (Some(a), Some(g)) => a.data.iter_mut().zip(&g.data).for_each(|(x, y)| *x += y),
                        (None, Some(g)) => *slot = Some(g),
                        _ => {}
                    }
                }
                sum.total += tape.value(total).item();
                sum.cls += tape.value(parts[0]).item();
                sum.can += tape.value(parts[1]).item();
                sum.reg += tape.value(parts[2]).item();
            }
            let n = cfg.batch_size as f64;
            let loss = LossBreakdown { total: sum.total / n, cls: sum.cls / n, can: sum.can / n, reg: sum.reg / n };
            if !loss.total.is_finite() {
                log::error!("stage {stage} step {step}: non-finite loss, keeping the last finite parameters");
                model.store = last_good;
                return Ok(TrainOutcome { model, records, diverged_at: Some(step) });
            }
            last_good = model.store.clone();
            for g in acc.iter_mut().flatten() {
                g.data.iter_mut().for_each(|x| *x /= n);
            }
            opt.step(&mut model.store, &acc, rate);
            let rec = StepRecord {
                stage,
                step,
                epoch,
                loss,
                tracker_lr: rate(crate::params::ParamGroup::Tracker),
                prompt_lr: rate(crate::params::ParamGroup::Prompting),
            };
            writeln!(log, "{}", rec.to_line())?;
            records.push(rec);
            step += 1;
        }
    }
    if !model.store.is_finite() {
        model.store = last_good;
        return Ok(TrainOutcome { model, records, diverged_at: Some(step) });
    }
    Ok(TrainOutcome { model, records, diverged_at: None })
}

/// Both stages back to back on a fresh model.
pub fn run_training(
    model: PivotModel,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    weights: &LossWeights,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    let first = run_stage(model, 1, data, cfg, weights, log)?;
    if first.diverged_at.is_some() {
        return Ok(first);
    }
    let mut second = run_stage(first.model, 2, data, cfg, weights, log)?;
    let mut records = first.records;
    records.append(&mut second.records);
    second.records = records;
    Ok(second)
}
