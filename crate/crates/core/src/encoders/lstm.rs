//! Single-layer LSTM over the time axis.

use crate::error::Result;
use crate::layers::{Linear, VisitParams};
use crate::rng::RngStream;
use crate::tensor::{Graph, Tensor};

use super::TsEncoding;

/// LSTM encoder. Gate blocks are laid out `[input, forget, candidate,
/// output]` along the `4H` axis; a single bias vector serves both the input
/// and recurrent paths, with the forget block initialized to 1.0 and
/// everything else uniform in `(-1/sqrt(H), 1/sqrt(H))`.
#[derive(Debug, Clone)]
pub struct LstmEncoder {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    pub proj: Linear,
}

impl LstmEncoder {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let uniform = |n: usize, rng: &mut RngStream| -> Vec<f64> {
            (0..n).map(|_| rng.uniform(-k, k)).collect()
        };
        let mut bias = uniform(4 * hidden, rng);
        for b in bias.iter_mut().skip(hidden).take(hidden) {
            *b = 1.0;
        }
        Self {
            w_ih: Tensor::param(vec![in_dim, 4 * hidden], uniform(in_dim * 4 * hidden, rng))
                .expect("w_ih dims"),
            w_hh: Tensor::param(vec![hidden, 4 * hidden], uniform(hidden * 4 * hidden, rng))
                .expect("w_hh dims"),
            bias: Tensor::param(vec![4 * hidden], bias).expect("bias dims"),
            proj: Linear::new(hidden, out_dim, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[0]
    }

    /// Pooled output is `ReLU(Linear(h_final))`; the sequence output stacks
    /// the hidden state of every time step.
    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<TsEncoding> {
        let (batch, len) = (x.shape()[0], x.shape()[1]);
        let hidden = self.hidden();
        let w_ih = g.var(&self.w_ih);
        let w_hh = g.var(&self.w_hh);
        let bias = g.var(&self.bias);

        let mut h = Tensor::zeros(vec![batch, hidden]);
        let mut c = Tensor::zeros(vec![batch, hidden]);
        let mut states = Vec::with_capacity(len);
        for t in 0..len {
            let x_t = g.index_axis(x, 1, t)?;
            let zi = g.matmul(&x_t, &w_ih)?;
            let zh = g.matmul(&h, &w_hh)?;
            let z = g.add(&zi, &zh)?;
            let z = g.add(&z, &bias)?;
            let i_gate = g.slice_last(&z, 0, hidden)?;
            let f_gate = g.slice_last(&z, hidden, 2 * hidden)?;
            let cand = g.slice_last(&z, 2 * hidden, 3 * hidden)?;
            let o_gate = g.slice_last(&z, 3 * hidden, 4 * hidden)?;
            let i_gate = g.sigmoid(&i_gate)?;
            let f_gate = g.sigmoid(&f_gate)?;
            let cand = g.tanh(&cand)?;
            let o_gate = g.sigmoid(&o_gate)?;
            let keep = g.mul(&f_gate, &c)?;
            let write = g.mul(&i_gate, &cand)?;
            c = g.add(&keep, &write)?;
            let c_act = g.tanh(&c)?;
            h = g.mul(&o_gate, &c_act)?;
            states.push(h.clone());
        }
        let refs: Vec<&Tensor> = states.iter().collect();
        let stacked = g.concat_last(&refs)?;
        let seq = g.reshape(&stacked, vec![batch, len, hidden])?;
        let proj = self.proj.forward(g, &h)?;
        let pooled = g.relu(&proj)?;
        Ok(TsEncoding { pooled, seq })
    }
}

impl VisitParams for LstmEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.w_ih"), &mut self.w_ih);
        f(format!("{prefix}.w_hh"), &mut self.w_hh);
        f(format!("{prefix}.bias"), &mut self.bias);
        self.proj.visit_params(&format!("{prefix}.proj"), f);
    }
}
