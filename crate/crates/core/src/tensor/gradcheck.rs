//! Central finite-difference verification of analytic gradients.

use crate::error::Result;

use super::{Graph, Tensor};

/// Default perturbation step for 64-bit floats.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Absolute agreement below which central differences cannot resolve a
/// disagreement at all (machine rounding of the loss divided by the step
/// dominates). Used by [`worst_resolvable_rel`] for composite graphs whose
/// layer norms legitimately produce gradients near the noise floor.
pub const FD_ATOL: f64 = 1e-8;

/// One checked gradient entry.
#[derive(Debug, Clone, Copy)]
pub struct EntryCheck {
    pub analytic: f64,
    pub numeric: f64,
}

impl EntryCheck {
    /// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub fn rel(&self) -> f64 {
        (self.analytic - self.numeric).abs() / (self.analytic.abs() + self.numeric.abs()).max(1e-8)
    }

    pub fn abs_diff(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }
}

/// Compare the analytic gradient of a scalar-valued graph builder against
/// central finite differences at the given inputs. Returns the maximum over
/// all input entries of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// The builder must be deterministic: it is re-invoked on perturbed copies
/// of the inputs, so any randomness inside (dropout masks) has to come from
/// a stream it reseeds itself.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Tensor]) -> Result<Tensor>,
{
    let entries = grad_check_entries(f, inputs, step)?;
    Ok(entries.iter().map(EntryCheck::rel).fold(0.0, f64::max))
}

/// Like [`grad_check`] but returns every compared entry, flattened over the
/// inputs in order.
pub fn grad_check_entries<F>(f: F, inputs: &[Tensor], step: f64) -> Result<Vec<EntryCheck>>
where
    F: Fn(&mut Graph, &[Tensor]) -> Result<Tensor>,
{
    let params: Vec<Tensor> = inputs
        .iter()
        .map(|t| {
            Tensor::param(t.shape().to_vec(), t.values().to_vec()).expect("valid input tensor")
        })
        .collect();

    // Analytic gradients. A builder that ignores its inputs yields a loss
    // outside the graph; all gradients are zero then.
    let mut graph = Graph::new();
    let registered: Vec<Tensor> = params.iter().map(|p| graph.var(p)).collect();
    let loss = f(&mut graph, &registered)?;
    loss.item()?;
    let analytic: Vec<Tensor> = if loss.node_id().is_some() {
        let grads = graph.backward(&loss)?;
        params.iter().map(|p| grads.for_param_or_zeros(p)).collect()
    } else {
        params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect()
    };

    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Tensor> = points.iter().map(|p| g.var(p)).collect();
        f(&mut g, &vars)?.item()
    };

    let mut entries = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let mut plus = params.clone();
            plus[pi].values_mut()[j] += step;
            let mut minus = params.clone();
            minus[pi].values_mut()[j] -= step;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
            entries.push(EntryCheck {
                analytic: analytic[pi].values()[j],
                numeric,
            });
        }
    }
    Ok(entries)
}

/// Worst relative error over entries the finite difference can actually
/// resolve: entries whose analytic and numeric values agree to within
/// `atol` absolutely count as exact. Composite graphs (residual + layer
/// norm stacks) produce legitimate gradients near the rounding floor of
/// the loss, where the relative formula measures only noise.
pub fn worst_resolvable_rel(entries: &[EntryCheck], atol: f64) -> f64 {
    entries
        .iter()
        .filter(|e| e.abs_diff() >= atol)
        .map(EntryCheck::rel)
        .fold(0.0, f64::max)
}
