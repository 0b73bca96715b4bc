//! Training objective: hinged classification loss on both score maps and a
//! GIoU loss on the regression map, weighted and summed.

use serde::{Deserialize, Serialize};

use crate::autograd::anchored_giou_with_grad;
use crate::error::{shape_err, Error, Result};
use crate::grid::{LtrbMap, ScoreMap};
use crate::training::labels::LabelPair;

/// Label value at and above which a cell counts as foreground.
pub const FG_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_can: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_cls: 100.0, lambda_can: 10.0, lambda_reg: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_cls, self.lambda_can, self.lambda_reg].iter().all(|&v| v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

/// Per-cell residual: `s - y` on foreground cells, `max(0, s)` on background.
pub fn hinge_residual(s: f64, y: f64) -> f64 {
    if y >= FG_THRESHOLD {
        s - y
    } else {
        s.max(0.0)
    }
}

/// Mean squared hinged residual over all cells.
pub fn classification_loss(pred: &ScoreMap, label: &ScoreMap) -> Result<f64> {
    if (pred.h, pred.w) != (label.h, label.w) {
        return shape_err(format!("classification loss: {}x{} vs {}x{}", pred.h, pred.w, label.h, label.w));
    }
    let n = pred.values.len() as f64;
    Ok(pred.values.iter().zip(&label.values).map(|(&s, &y)| hinge_residual(s, y).powi(2)).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionLoss {
    pub value: f64,
    /// Set when the label had no valid cell and the loss defaulted to 0.
    pub no_valid_cells: bool,
}

/// Mean `1 - GIoU` between predicted and labelled boxes over the label's
/// valid cells.
pub fn regression_loss(pred: &LtrbMap, label: &LabelPair) -> Result<RegressionLoss> {
    if (pred.h, pred.w) != (label.reg.h, label.reg.w) {
        return shape_err(format!("regression loss: {}x{} vs {}x{}", pred.h, pred.w, label.reg.h, label.reg.w));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, _) in label.reg.mask.iter().enumerate().filter(|(_, &m)| m) {
        let (g, _) = anchored_giou_with_grad(&pred.values[i * 4..i * 4 + 4], &label.reg.values[i * 4..i * 4 + 4]);
        total += 1.0 - g;
        count += 1;
    }
    if count == 0 {
        return Ok(RegressionLoss { value: 0.0, no_valid_cells: true });
    }
    Ok(RegressionLoss { value: total / count as f64, no_valid_cells: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub can: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(cls: f64, can: f64, reg: f64, w: &LossWeights) -> Self {
        Self { cls, can, reg, total: w.lambda_cls * cls + w.lambda_can * can + w.lambda_reg * reg }
    }
}

/// Weighted objective over the tracker score map, the prompt and the
/// regression map; both score maps share the same Gaussian label.
pub fn total_loss(
    h_cls: &ScoreMap,
    h_can: &ScoreMap,
    d: &LtrbMap,
    label: &LabelPair,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let cls = classification_loss(h_cls, &label.cls)?;
    let can = classification_loss(h_can, &label.cls)?;
    let reg = regression_loss(d, label)?.value;
    Ok(LossBreakdown::combine(cls, can, reg, w))
}
