//! Prediction heads and the training objective.

use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::tensor::{Graph, Tensor};

/// Clamp bound keeping the loss logs finite.
pub const PROB_CLAMP: f64 = 1e-12;

/// Multi-label head: `softmax(Linear(m))`, rows summing to one.
pub fn predict_multilabel(g: &mut Graph, m: &Tensor, head: &Linear) -> Result<Tensor> {
    let logits = head.forward(g, m)?;
    g.softmax_last(&logits)
}

/// Binary head: `sigmoid(Linear(m))` squeezed to a `[B]` vector.
pub fn predict_binary(g: &mut Graph, m: &Tensor, head: &Linear) -> Result<Tensor> {
    let logits = head.forward(g, m)?;
    let prob = g.sigmoid(&logits)?;
    let batch = prob.shape()[0];
    g.reshape(&prob, vec![batch])
}

/// Mean cross-entropy between predictions in (0,1) and 0/1 targets:
/// the label axis is summed per sample and the batch averaged. Predictions
/// are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the logs.
pub fn bce_loss(g: &mut Graph, pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            kind: "bce_loss",
            lhs: pred.shape().to_vec(),
            rhs: truth.shape().to_vec(),
        });
    }
    let batch = pred.shape()[0] as f64;
    let p = g.scalar_min(pred, 1.0 - PROB_CLAMP)?;
    let p = g.scalar_max(&p, PROB_CLAMP)?;
    let log_p = g.log(&p)?;
    let pos = g.mul(truth, &log_p)?;
    let complement = g.one_minus(&p)?;
    let log_c = g.log(&complement)?;
    let truth_c = g.one_minus(truth)?;
    let neg = g.mul(&truth_c, &log_c)?;
    let term = g.add(&pos, &neg)?;
    let total = g.sum_all(&term)?;
    g.scale(&total, -1.0 / batch)
}
