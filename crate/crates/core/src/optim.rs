//! Adam with bias correction, plus global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::layers::VisitParams;
use crate::model::Model;
use crate::tensor::Gradients;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
/// Global-norm clip applied before every update.
pub const CLIP_NORM: f64 = 5.0;

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state: first/second moments per parameter, in the model's
/// visiting order, and a shared step count.
pub struct Adam {
    lr: f64,
    step: u64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(model: &mut Model, lr: f64) -> Self {
        let mut moments = Vec::new();
        model.visit_params("model", &mut |_, t| {
            moments.push(Moments {
                m: vec![0.0; t.numel()],
                v: vec![0.0; t.numel()],
            });
        });
        Self {
            lr,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from a backward pass: verify gradients are finite, clip
    /// by global norm, then apply the bias-corrected Adam rule in place.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        // collect per-parameter gradient buffers first: the NaN check and
        // the global norm precede any mutation
        let mut grad_bufs: Vec<Vec<f64>> = Vec::with_capacity(self.moments.len());
        let mut nan_param: Option<String> = None;
        model.visit_params("model", &mut |name, t| {
            let g = grads.for_param_or_zeros(t);
            if nan_param.is_none() && g.values().iter().any(|v| !v.is_finite()) {
                nan_param = Some(name);
            }
            grad_bufs.push(g.values().to_vec());
        });
        if let Some(name) = nan_param {
            return Err(Error::NanGradient(name));
        }
        let norm_sq: f64 = grad_bufs.iter().flat_map(|g| g.iter()).map(|v| v * v).sum();
        let norm = norm_sq.sqrt();
        let scale = if norm > CLIP_NORM {
            CLIP_NORM / norm
        } else {
            1.0
        };

        self.step += 1;
        let step = self.step;
        let lr = self.lr;
        let moments = &mut self.moments;
        let mut idx = 0usize;
        model.visit_params("model", &mut |_, t| {
            let mo = &mut moments[idx];
            update_buffer(
                t.values_mut(),
                &grad_bufs[idx],
                &mut mo.m,
                &mut mo.v,
                step,
                lr,
                scale,
            );
            idx += 1;
        });
        Ok(())
    }
}

/// Bias-corrected Adam update of one parameter buffer.
fn update_buffer(
    values: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    grad_scale: f64,
) {
    let bc1 = 1.0 - BETA1.powi(step as i32);
    let bc2 = 1.0 - BETA2.powi(step as i32);
    for j in 0..values.len() {
        let gj = grad[j] * grad_scale;
        m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
        v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
        let m_hat = m[j] / bc1;
        let v_hat = v[j] / bc2;
        values[j] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}
