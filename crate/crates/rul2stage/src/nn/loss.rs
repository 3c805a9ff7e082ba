//! Training losses: binary cross-entropy for the health-state stage, mean
//! absolute error for the remaining-life stage, and mean squared error for
//! the capacity-forecasting baseline harness.

use crate::error::{Error, Result};

/// Clamp bound keeping `ln` finite on saturated classifier outputs.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Mae,
    Mse,
}

impl LossKind {
    /// Loss and gradient w.r.t. the prediction for a single sample. Batch
    /// losses are means of these, so the trainer averages both.
    pub fn per_sample(self, prediction: f64, target: f64) -> Result<(f64, f64)> {
        match self {
            LossKind::Bce => bce_loss(prediction, target),
            LossKind::Mae => {
                let diff = prediction - target;
                Ok((diff.abs(), sign(diff)))
            }
            LossKind::Mse => {
                let diff = prediction - target;
                Ok((diff * diff, 2.0 * diff))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `-[y ln p + (1-y) ln(1-p)]` with the prediction clamped to
/// `[BCE_EPS, 1-BCE_EPS]`; the gradient is taken at the clamped value.
pub fn bce_loss(prediction: f64, label: f64) -> Result<(f64, f64)> {
    if label != 0.0 && label != 1.0 {
        return Err(Error::Data(format!(
            "binary cross-entropy label must be 0 or 1, got {label}"
        )));
    }
    let p = prediction.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
    let grad = -(label / p) + (1.0 - label) / (1.0 - p);
    Ok((loss, grad))
}

/// Mean absolute error over paired lists, with the subgradient w.r.t. each
/// prediction: `sign(pred - target) / n`, zero at ties.
pub fn mae_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    paired(predictions, targets)?;
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &t) in predictions.iter().zip(targets) {
        total += (p - t).abs();
        grad.push(sign(p - t) / n);
    }
    Ok((total / n, grad))
}

/// Mean squared error over paired lists with gradient `2(pred - target)/n`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    paired(predictions, targets)?;
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &t) in predictions.iter().zip(targets) {
        total += (p - t) * (p - t);
        grad.push(2.0 * (p - t) / n);
    }
    Ok((total / n, grad))
}

fn paired(predictions: &[f64], targets: &[f64]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::Data("loss over empty prediction list".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(())
}
