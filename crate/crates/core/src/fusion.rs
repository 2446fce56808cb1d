//! Fusion of the three encoded modalities.
//!
//! The primary mechanism is attention gating: per-sample scalar gates over
//! the two auxiliary representations produce a displacement vector that is
//! added to the main representation, scaled by a norm-capped factor with a
//! trainable scale. The main modality is switchable between the notes and
//! time-series representations; the other strategies (early concatenation,
//! outer-product tensor fusion, cross-attention fusion) are provided for
//! comparison runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Linear, MultiHeadAttention, VisitParams};
use crate::rng::RngStream;
use crate::tensor::{Graph, Tensor};

/// Which representation the displacement vector shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MainModality {
    Notes,
    TimeSeries,
}

/// The three encoded representations of one batch.
#[derive(Debug, Clone)]
pub struct EncodedTriple {
    pub e_ti: Tensor,
    pub e_ts: Tensor,
    pub e_nt: Tensor,
    pub main: MainModality,
}

impl EncodedTriple {
    /// (main, auxiliary) under the selected main modality.
    pub fn main_aux(&self) -> (&Tensor, &Tensor) {
        match self.main {
            MainModality::Notes => (&self.e_nt, &self.e_ts),
            MainModality::TimeSeries => (&self.e_ts, &self.e_nt),
        }
    }
}

/// Attention-gating fusion parameters. `gate_ti` scores the time-invariant
/// representation against the main one, `gate_aux` the remaining
/// time-series/notes representation; both produce one nonnegative scalar
/// per sample. `shift` maps the gated concatenation to the main width, and
/// `beta` is the trainable scale inside the norm cap, initialized uniform
/// in (0, 1).
#[derive(Debug, Clone)]
pub struct AttentionGate {
    pub gate_ti: Linear,
    pub gate_aux: Linear,
    pub shift: Linear,
    pub beta: Tensor,
}

/// Forward outputs exposed for inspection: the fused representation plus
/// the per-sample gate and scale values.
#[derive(Debug)]
pub struct GateDetail {
    pub fused: Tensor,
    pub alpha: Tensor,
    pub g1: Tensor,
    pub g2: Tensor,
    pub displacement: Tensor,
}

impl AttentionGate {
    pub fn new(main_dim: usize, ti_dim: usize, aux_dim: usize, rng: &mut RngStream) -> Self {
        Self {
            gate_ti: Linear::new(main_dim + ti_dim, 1, rng),
            gate_aux: Linear::new(main_dim + aux_dim, 1, rng),
            shift: Linear::new(ti_dim + aux_dim, main_dim, rng),
            beta: Tensor::param(vec![], vec![rng.uniform(0.0, 1.0)]).expect("beta scalar"),
        }
    }

    pub fn main_dim(&self) -> usize {
        self.shift.out_dim()
    }

    pub fn forward(&self, g: &mut Graph, triple: &EncodedTriple) -> Result<Tensor> {
        Ok(self.forward_detailed(g, triple)?.fused)
    }

    pub fn forward_detailed(&self, g: &mut Graph, triple: &EncodedTriple) -> Result<GateDetail> {
        let (main, aux) = triple.main_aux();
        let batch = main.shape()[0];
        if main.shape()[1] != self.main_dim() {
            return Err(Error::ShapeMismatch {
                kind: "attention_gate",
                lhs: main.shape().to_vec(),
                rhs: vec![batch, self.main_dim()],
            });
        }

        let cat_ti = g.concat_last(&[main, &triple.e_ti])?;
        let g1_pre = self.gate_ti.forward(g, &cat_ti)?;
        let g1 = g.relu(&g1_pre)?;
        let cat_aux = g.concat_last(&[main, aux])?;
        let g2_pre = self.gate_aux.forward(g, &cat_aux)?;
        let g2 = g.relu(&g2_pre)?;

        let gated_ti = g.mul(&g1, &triple.e_ti)?;
        let gated_aux = g.mul(&g2, aux)?;
        let shift_in = g.concat_last(&[&gated_ti, &gated_aux])?;
        let displacement = self.shift.forward(g, &shift_in)?;

        let norm_main = g.l2_norm(main)?;
        let norm_disp = g.l2_norm(&displacement)?;
        // rows with a zero-norm displacement take alpha = 0, the continuous
        // limit of alpha·H as H → 0
        let live: Vec<f64> = norm_disp
            .values()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let dead = Tensor::new(vec![batch], live.iter().map(|&m| 1.0 - m).collect())?;
        let live = Tensor::new(vec![batch], live)?;
        let denom = g.add(&norm_disp, &dead)?;
        let inv = g.recip(&denom)?;
        let ratio = g.mul(&norm_main, &inv)?;
        let beta = g.var(&self.beta);
        let scaled = g.mul(&ratio, &beta)?;
        let gated_scale = g.mul(&scaled, &live)?;
        let alpha = g.scalar_min(&gated_scale, 1.0)?;

        let alpha_col = g.reshape(&alpha, vec![batch, 1])?;
        let shift = g.mul(&alpha_col, &displacement)?;
        let fused = g.add(main, &shift)?;
        Ok(GateDetail {
            fused,
            alpha,
            g1,
            g2,
            displacement,
        })
    }
}

impl VisitParams for AttentionGate {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.gate_ti.visit_params(&format!("{prefix}.gate_ti"), f);
        self.gate_aux.visit_params(&format!("{prefix}.gate_aux"), f);
        self.shift.visit_params(&format!("{prefix}.shift"), f);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Repeat the time-invariant vector along the time axis and concatenate it
/// with every time step: `[B, D1] × [B, L, D2]` → `[B, L, D1 + D2]`.
pub fn early_fuse(g: &mut Graph, i_ti: &Tensor, i_ts: &Tensor) -> Result<Tensor> {
    if i_ti.rank() != 2 || i_ts.rank() != 3 || i_ti.shape()[0] != i_ts.shape()[0] {
        return Err(Error::ShapeMismatch {
            kind: "early_fuse",
            lhs: i_ti.shape().to_vec(),
            rhs: i_ts.shape().to_vec(),
        });
    }
    let (batch, len) = (i_ts.shape()[0], i_ts.shape()[1]);
    let d1 = i_ti.shape()[1];
    let repeats: Vec<&Tensor> = (0..len).map(|_| i_ti).collect();
    let tiled_flat = g.concat_last(&repeats)?;
    let tiled = g.reshape(&tiled_flat, vec![batch, len, d1])?;
    g.concat_last(&[&tiled, i_ts])
}

/// Per-row outer product of two pooled representations followed by a dense
/// projection.
pub fn tensor_fuse(g: &mut Graph, a: &Tensor, b: &Tensor, proj: &Linear) -> Result<Tensor> {
    let outer = g.outer_product(a, b)?;
    if outer.shape()[1] != proj.in_dim() {
        return Err(Error::ShapeMismatch {
            kind: "tensor_fuse",
            lhs: outer.shape().to_vec(),
            rhs: vec![proj.in_dim(), proj.out_dim()],
        });
    }
    proj.forward(g, &outer)
}

/// Cross-attention fusion: queries come from the auxiliary sequence, keys
/// and values from the main sequence; the attended outputs are mean-pooled
/// over the query positions.
pub fn attention_fuse(
    g: &mut Graph,
    main_seq: &Tensor,
    aux_seq: &Tensor,
    attn: &MultiHeadAttention,
) -> Result<Tensor> {
    if main_seq.rank() != 3 || aux_seq.rank() != 3 {
        return Err(Error::ShapeMismatch {
            kind: "attention_fuse",
            lhs: main_seq.shape().to_vec(),
            rhs: aux_seq.shape().to_vec(),
        });
    }
    let attended = attn.forward(g, aux_seq, main_seq, None)?;
    g.mean_axis(&attended, 1)
}

#[cfg(test)]
mod tests;
