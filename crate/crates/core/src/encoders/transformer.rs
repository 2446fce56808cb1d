//! Transformer encoder over the time axis. The mean-pooled final-layer
//! states are the representation directly; no trailing projection.

use crate::error::{Error, Result};
use crate::layers::{embedding_table, Linear, TransformerLayer, VisitParams};
use crate::rng::RngStream;
use crate::tensor::{Graph, Tensor};

use super::TsEncoding;

#[derive(Debug, Clone)]
pub struct TransformerTsEncoder {
    pub embed: Linear,
    pub pos: Tensor,
    pub layers: Vec<TransformerLayer>,
    pub dropout: f64,
}

impl TransformerTsEncoder {
    pub fn new(
        in_dim: usize,
        width: usize,
        layers: usize,
        heads: usize,
        max_len: usize,
        dropout: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|_| TransformerLayer::new(width, heads, 4 * width, dropout, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embed: Linear::new(in_dim, width, rng),
            pos: embedding_table(max_len, width, rng),
            layers,
            dropout,
        })
    }

    pub fn width(&self) -> usize {
        self.embed.out_dim()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: &Tensor,
        rng: &mut RngStream,
        train: bool,
    ) -> Result<TsEncoding> {
        let len = x.shape()[1];
        if len > self.pos.shape()[0] {
            return Err(Error::InvalidShape {
                kind: "encode_ts",
                shape: x.shape().to_vec(),
                reason: format!("sequence longer than {} positions", self.pos.shape()[0]),
            });
        }
        let mut h = self.embed.forward(g, x)?;
        let pos_table = g.var(&self.pos);
        let positions: Vec<usize> = (0..len).collect();
        let pos = g.embedding_lookup(&pos_table, &positions, &[len])?;
        h = g.add(&h, &pos)?;
        h = g.dropout(&h, self.dropout, rng, train)?;
        for layer in &self.layers {
            h = layer.forward(g, &h, None, rng, train)?;
        }
        let pooled = g.mean_axis(&h, 1)?;
        Ok(TsEncoding { pooled, seq: h })
    }
}

impl VisitParams for TransformerTsEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.embed.visit_params(&format!("{prefix}.embed"), f);
        f(format!("{prefix}.pos"), &mut self.pos);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params(&format!("{prefix}.layer{i}"), f);
        }
    }
}
