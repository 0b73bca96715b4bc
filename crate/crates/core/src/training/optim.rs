//! AdamW with per-group learning rates and step-decay schedules.

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.rows, t.cols);
        let m: Vec<_> = store.iter().map(|(_, _, t)| zeros(t)).collect();
        Self { cfg, v: m.clone(), m, t: 0 }
    }

    /// One update. `lr` gives the rate of each group; a rate of zero or a
    /// missing gradient leaves the parameter untouched. Weight decay is
    /// decoupled and applied to matrices only.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: impl Fn(ParamGroup) -> f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id.index()).and_then(|g| g.as_ref()) else { continue };
            let rate = lr(store.group(id));
            if rate == 0.0 {
                continue;
            }
            let k = id.index();
            let p = store.value_mut(id);
            let decay = if p.rows > 1 && p.cols > 1 { self.cfg.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[k].data, &mut self.v[k].data);
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g.data[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g.data[i] * g.data[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.data[i] -= rate * (mh / (vh.sqrt() + self.cfg.eps) + decay * p.data[i]);
            }
        }
    }
}

/// Step-decay learning-rate schedule of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSchedule {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    /// Base rate of the tracker group (adapter and head).
    pub tracker_lr: f64,
    /// Base rate of the prompting group (PGN and RM); unused in stage 1.
    pub prompt_lr: f64,
    /// Global multiplier applied to both groups.
    pub lr_scale: f64,
    pub decay_factor: f64,
    /// Epoch indices at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
}

impl StageSchedule {
    fn decay(&self, epoch: usize) -> f64 {
        self.decay_factor.powi(self.decay_epochs.iter().filter(|&&e| e <= epoch).count() as i32)
    }

    pub fn rate(&self, group: ParamGroup, epoch: usize) -> f64 {
        let base = match group {
            ParamGroup::Tracker => self.tracker_lr,
            ParamGroup::Prompting => self.prompt_lr,
        };
        base * self.lr_scale * self.decay(epoch)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.samples_per_epoch > 0
            && self.tracker_lr >= 0.0
            && self.prompt_lr >= 0.0
            && self.lr_scale > 0.0
            && self.decay_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid stage schedule {self:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn stage2() -> StageSchedule {
        StageSchedule {
            epochs: 6,
            samples_per_epoch: 100,
            tracker_lr: 4e-6,
            prompt_lr: 5e-3,
            lr_scale: 1.0,
            decay_factor: 0.2,
            decay_epochs: vec![5],
        }
    }

    #[test]
    fn group_ratio_survives_scaling() {
        for scale in [0.1, 1.0, 3.0, 25.0] {
            let s = StageSchedule { lr_scale: scale, ..stage2() };
            for e in 0..6 {
                let r = s.rate(ParamGroup::Prompting, e) / s.rate(ParamGroup::Tracker, e);
                assert!((r - 5e-3 / 4e-6).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn step_decay() {
        let s = StageSchedule { decay_epochs: vec![30, 50], tracker_lr: 1e-4, epochs: 60, ..stage2() };
        assert_eq!(s.rate(ParamGroup::Tracker, 29), 1e-4);
        assert!((s.rate(ParamGroup::Tracker, 30) - 2e-5).abs() < 1e-18);
        assert!((s.rate(ParamGroup::Tracker, 55) - 4e-6).abs() < 1e-18);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("b", ParamGroup::Tracker, Tensor::new(1, 2, vec![1.0, -1.0]));
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        let g = vec![Some(Tensor::new(1, 2, vec![0.5, -2.0]))];
        opt.step(&mut store, &g, |_| 0.01);
        let v = store.value(id).data.clone();
        assert!((v[0] - 0.99).abs() < 1e-9 && (v[1] + 0.99).abs() < 1e-9);
        opt.step(&mut store, &[None], |_| 0.01);
        assert_eq!(store.value(id).data[0], v[0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamGroup::Prompting, Tensor::new(2, 2, vec![3.0, -2.0, 1.0, 4.0]));
        let mut opt = AdamW::new(&store, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..2000 {
            let g = Tensor::new(2, 2, store.value(id).data.iter().map(|x| 2.0 * x).collect());
            opt.step(&mut store, &[Some(g)], |_| 0.05);
        }
        assert!(store.value(id).data.iter().all(|x| x.abs() < 1e-2));
    }
}
