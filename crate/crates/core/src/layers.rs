//! Parameterized building blocks shared by the encoders and fusion heads:
//! dense layers, layer norm, multi-head attention, transformer layers.
//!
//! Every block owns its parameter tensors and knows how to enumerate them
//! for the optimizer and checkpointing (`visit_params`). Forward methods
//! take the graph plus input tensors and never mutate the block.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Graph, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Walk every parameter tensor in a stable order.
pub trait VisitParams {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));
}

/// Xavier-uniform initialized weight matrix `[fan_in, fan_out]`.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Tensor::param(vec![fan_in, fan_out], values).expect("xavier dims")
}

/// Embedding table `[rows, dim]` with N(0, 0.02) entries.
pub fn embedding_table(rows: usize, dim: usize, rng: &mut RngStream) -> Tensor {
    let values = (0..rows * dim).map(|_| 0.02 * rng.gaussian()).collect();
    Tensor::param(vec![rows, dim], values).expect("embedding dims")
}

/// Dense layer: `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        Self {
            weight: xavier(in_dim, out_dim, rng),
            bias: Tensor::param(vec![out_dim], vec![0.0; out_dim]).expect("bias dims"),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Applies to the last axis of `x`.
    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        let w = g.var(&self.weight);
        let b = g.var(&self.bias);
        let wx = if x.rank() == 1 {
            // promote a vector to one row
            let row = g.reshape(x, vec![1, x.numel()])?;
            let prod = g.matmul(&row, &w)?;
            g.reshape(&prod, vec![self.out_dim()])?
        } else {
            g.matmul(x, &w)?
        };
        g.add(&wx, &b)
    }
}

impl VisitParams for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::param(vec![dim], vec![1.0; dim]).expect("gamma dims"),
            beta: Tensor::param(vec![dim], vec![0.0; dim]).expect("beta dims"),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        let gamma = g.var(&self.gamma);
        let beta = g.var(&self.beta);
        g.layer_norm(x, &gamma, &beta, LAYER_NORM_EPS)
    }
}

impl VisitParams for LayerNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Multi-head scaled dot-product attention. Queries may come from a
/// different sequence than keys/values (cross-attention); an optional
/// `[B, Lk]` mask of 0/1 removes padded key positions.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut RngStream) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidConfig(format!(
                "attention width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.out_dim()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        q_seq: &Tensor,
        kv_seq: &Tensor,
        mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        Ok(self.attend(g, q_seq, kv_seq, mask)?.0)
    }

    /// Forward pass that also returns the per-head attention weight
    /// matrices (`[B, Lq, Lk]` each), for inspection in tests.
    pub fn attend(
        &self,
        g: &mut Graph,
        q_seq: &Tensor,
        kv_seq: &Tensor,
        mask: Option<&Tensor>,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let (b, lk) = (kv_seq.shape()[0], kv_seq.shape()[1]);
        let dim = self.dim();
        let dh = dim / self.heads;
        let q = self.wq.forward(g, q_seq)?;
        let k = self.wk.forward(g, kv_seq)?;
        let v = self.wv.forward(g, kv_seq)?;

        let mask_bias = match mask {
            Some(m) => Some(attention_mask_bias(m, b, lk)?),
            None => None,
        };

        let mut head_outs = Vec::with_capacity(self.heads);
        let mut head_weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_last(&q, h * dh, (h + 1) * dh)?;
            let kh = g.slice_last(&k, h * dh, (h + 1) * dh)?;
            let vh = g.slice_last(&v, h * dh, (h + 1) * dh)?;
            let scores = g.matmul_t(&qh, &kh, true)?;
            let scaled = g.scale(&scores, 1.0 / (dh as f64).sqrt())?;
            let biased = match &mask_bias {
                Some(mb) => g.add(&scaled, mb)?,
                None => scaled,
            };
            let weights = g.softmax_last(&biased)?;
            head_outs.push(g.matmul(&weights, &vh)?);
            head_weights.push(weights);
        }
        let merged_refs: Vec<&Tensor> = head_outs.iter().collect();
        let merged = g.concat_last(&merged_refs)?;
        Ok((self.wo.forward(g, &merged)?, head_weights))
    }
}

impl VisitParams for MultiHeadAttention {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.wq.visit_params(&format!("{prefix}.wq"), f);
        self.wk.visit_params(&format!("{prefix}.wk"), f);
        self.wv.visit_params(&format!("{prefix}.wv"), f);
        self.wo.visit_params(&format!("{prefix}.wo"), f);
    }
}

/// Additive attention bias from a `[B, Lk]` 0/1 mask: 0 where attended,
/// a large negative constant where padded. Errors on a fully masked row.
fn attention_mask_bias(mask: &Tensor, batch: usize, lk: usize) -> Result<Tensor> {
    if mask.shape() != [batch, lk] {
        return Err(Error::ShapeMismatch {
            kind: "attention_mask",
            lhs: mask.shape().to_vec(),
            rhs: vec![batch, lk],
        });
    }
    let mut bias = vec![0.0; batch * lk];
    for r in 0..batch {
        let row = &mask.values()[r * lk..(r + 1) * lk];
        if row.iter().all(|&m| m == 0.0) {
            return Err(Error::AllMasked { row: r });
        }
        for c in 0..lk {
            bias[r * lk + c] = if row[c] == 0.0 { -1e30 } else { 0.0 };
        }
    }
    Tensor::new(vec![batch, 1, lk], bias)
}

/// Position-wise feed-forward network with ReLU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl FeedForward {
    pub fn new(dim: usize, hidden: usize, rng: &mut RngStream) -> Self {
        Self {
            lin1: Linear::new(dim, hidden, rng),
            lin2: Linear::new(hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        let h = self.lin1.forward(g, x)?;
        let h = g.relu(&h)?;
        self.lin2.forward(g, &h)
    }
}

impl VisitParams for FeedForward {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.lin1.visit_params(&format!("{prefix}.lin1"), f);
        self.lin2.visit_params(&format!("{prefix}.lin2"), f);
    }
}

/// Post-norm transformer layer: self-attention and feed-forward, each
/// wrapped in residual + layer norm, with dropout on both sublayer outputs.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl TransformerLayer {
    pub fn new(
        dim: usize,
        heads: usize,
        ff_hidden: usize,
        dropout: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(dim, heads, rng)?,
            norm1: LayerNorm::new(dim),
            ff: FeedForward::new(dim, ff_hidden, rng),
            norm2: LayerNorm::new(dim),
            dropout,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: &Tensor,
        mask: Option<&Tensor>,
        rng: &mut RngStream,
        train: bool,
    ) -> Result<Tensor> {
        let attn_out = self.attn.forward(g, x, x, mask)?;
        let attn_out = g.dropout(&attn_out, self.dropout, rng, train)?;
        let h = g.add(x, &attn_out)?;
        let h = self.norm1.forward(g, &h)?;
        let ff_out = self.ff.forward(g, &h)?;
        let ff_out = g.dropout(&ff_out, self.dropout, rng, train)?;
        let out = g.add(&h, &ff_out)?;
        self.norm2.forward(g, &out)
    }
}

impl VisitParams for TransformerLayer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.attn.visit_params(&format!("{prefix}.attn"), f);
        self.norm1.visit_params(&format!("{prefix}.norm1"), f);
        self.ff.visit_params(&format!("{prefix}.ff"), f);
        self.norm2.visit_params(&format!("{prefix}.norm2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tensor::{grad_check, grad_check_entries, worst_resolvable_rel, FD_ATOL};

    fn randn(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = RngState::new(seed).stream("layer-test");
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gaussian()).collect()).unwrap()
    }

    #[test]
    fn linear_matches_manual_product() {
        let mut rng = RngState::new(1).stream("init");
        let lin = Linear::new(3, 2, &mut rng);
        let x = randn(vec![4, 3], 2);
        let mut g = Graph::new();
        let y = lin.forward(&mut g, &x).unwrap();
        for r in 0..4 {
            for c in 0..2 {
                let mut s = lin.bias.values()[c];
                for i in 0..3 {
                    s += x.values()[r * 3 + i] * lin.weight.values()[i * 2 + c];
                }
                assert!((y.values()[r * 2 + c] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rejects_bad_head_split() {
        let mut rng = RngState::new(1).stream("init");
        assert!(MultiHeadAttention::new(6, 4, &mut rng).is_err());
    }

    #[test]
    fn single_head_two_tokens_matches_reference() {
        // Independent dense-math reference for softmax(QKᵀ/√d)V on 2 tokens.
        let mut rng = RngState::new(3).stream("init");
        let dim = 4;
        let mha = MultiHeadAttention::new(dim, 1, &mut rng).unwrap();
        let x = randn(vec![1, 2, dim], 4);

        let mut g = Graph::new();
        let (out, weights) = mha.attend(&mut g, &x, &x, None).unwrap();

        let dense = |lin: &Linear, v: &[f64]| -> Vec<f64> {
            (0..dim)
                .map(|c| {
                    lin.bias.values()[c]
                        + (0..dim)
                            .map(|i| v[i] * lin.weight.values()[i * dim + c])
                            .sum::<f64>()
                })
                .collect()
        };
        let tok = |t: usize| &x.values()[t * dim..(t + 1) * dim];
        let q: Vec<Vec<f64>> = (0..2).map(|t| dense(&mha.wq, tok(t))).collect();
        let k: Vec<Vec<f64>> = (0..2).map(|t| dense(&mha.wk, tok(t))).collect();
        let v: Vec<Vec<f64>> = (0..2).map(|t| dense(&mha.wv, tok(t))).collect();
        let scale = 1.0 / (dim as f64).sqrt();
        for (ti, q_row) in q.iter().enumerate() {
            let s: Vec<f64> = (0..2)
                .map(|tj| scale * q_row.iter().zip(&k[tj]).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let m = s[0].max(s[1]);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z = e[0] + e[1];
            let w = [e[0] / z, e[1] / z];
            assert!((weights[0].values()[ti * 2] - w[0]).abs() < 1e-12);
            assert!((weights[0].values()[ti * 2 + 1] - w[1]).abs() < 1e-12);
            let ctx: Vec<f64> = (0..dim).map(|c| w[0] * v[0][c] + w[1] * v[1][c]).collect();
            let expect = dense(&mha.wo, &ctx);
            for (c, &e) in expect.iter().enumerate() {
                assert!((out.values()[ti * dim + c] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_positions_get_zero_weight() {
        let mut rng = RngState::new(5).stream("init");
        let mha = MultiHeadAttention::new(4, 2, &mut rng).unwrap();
        let x = randn(vec![2, 3, 4], 6);
        let mask = Tensor::matrix(2, 3, vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let (_, weights) = mha.attend(&mut g, &x, &x, Some(&mask)).unwrap();
        for w in &weights {
            for q in 0..3 {
                // row 0 masks key 2; row 1 masks keys 1 and 2
                assert_eq!(w.values()[q * 3 + 2], 0.0);
                assert_eq!(w.values()[(3 + q) * 3 + 1], 0.0);
                assert_eq!(w.values()[(3 + q) * 3 + 2], 0.0);
            }
        }
    }

    #[test]
    fn fully_masked_row_errors() {
        let mut rng = RngState::new(5).stream("init");
        let mha = MultiHeadAttention::new(4, 1, &mut rng).unwrap();
        let x = randn(vec![1, 2, 4], 6);
        let mask = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let err = mha.forward(&mut g, &x, &x, Some(&mask)).unwrap_err();
        assert!(matches!(err, Error::AllMasked { row: 0 }));
    }

    #[test]
    fn transformer_layer_gradcheck() {
        let mut rng = RngState::new(7).stream("init");
        let layer = TransformerLayer::new(4, 2, 8, 0.0, &mut rng).unwrap();
        let x = randn(vec![2, 3, 4], 8);
        let entries = grad_check_entries(
            |g, inputs| {
                let mut drop_rng = RngState::new(0).stream("unused");
                let out = layer.forward(g, &inputs[0], None, &mut drop_rng, false)?;
                // squared readout: fresh layer-norm output sums to ~0, which
                // would make a plain-sum loss degenerate
                let sq = g.mul(&out, &out)?;
                g.sum_all(&sq)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        let err = worst_resolvable_rel(&entries, FD_ATOL);
        assert!(err < 1e-4, "transformer layer gradcheck {err}");
    }

    #[test]
    fn layer_norm_gradcheck() {
        let ln = LayerNorm::new(5);
        let x = randn(vec![3, 5], 9);
        let gamma = randn(vec![5], 10);
        let err = grad_check(
            |g, inputs| {
                let beta = g.var(&ln.beta);
                let y = g.layer_norm(&inputs[0], &inputs[1], &beta, LAYER_NORM_EPS)?;
                let sq = g.mul(&y, &y)?;
                g.sum_all(&sq)
            },
            &[x, gamma],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "layer norm gradcheck {err}");
    }
}
