//! BERT-architecture text encoder over pre-tokenized integer ids:
//! token + learned position embeddings, layer norm, a stack of post-norm
//! transformer layers with key masking, and the final-layer state at the
//! classification token (position 0) as the pooled representation.

use crate::error::{Error, Result};
use crate::layers::{embedding_table, LayerNorm, TransformerLayer, VisitParams};
use crate::rng::RngStream;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub token_emb: Tensor,
    pub pos_emb: Tensor,
    pub ln_emb: LayerNorm,
    pub layers: Vec<TransformerLayer>,
    pub dropout: f64,
}

#[derive(Debug)]
pub struct TextEncoding {
    /// `[B, D3']` classification-token state.
    pub pooled: Tensor,
    /// `[B, L, D3']` final-layer token states.
    pub seq: Tensor,
}

impl TextEncoder {
    pub fn new(
        vocab: usize,
        width: usize,
        layers: usize,
        heads: usize,
        max_positions: usize,
        dropout: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let layers = (0..layers)
            .map(|_| TransformerLayer::new(width, heads, 4 * width, dropout, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            token_emb: embedding_table(vocab, width, rng),
            pos_emb: embedding_table(max_positions, width, rng),
            ln_emb: LayerNorm::new(width),
            layers,
            dropout,
        })
    }

    pub fn width(&self) -> usize {
        self.token_emb.shape()[1]
    }

    pub fn vocab(&self) -> usize {
        self.token_emb.shape()[0]
    }

    /// Embed a padded `[B, L]` id block: token + position embeddings,
    /// layer norm. Exposed separately so tests can probe attention on the
    /// embedded sequence.
    pub fn embed(&self, g: &mut Graph, ids: &[usize], batch: usize, len: usize) -> Result<Tensor> {
        if len > self.pos_emb.shape()[0] {
            return Err(Error::InvalidShape {
                kind: "encode_text",
                shape: vec![batch, len],
                reason: format!("sequence longer than {} positions", self.pos_emb.shape()[0]),
            });
        }
        let tokens = g.var(&self.token_emb);
        let tok = g.embedding_lookup(&tokens, ids, &[batch, len])?;
        let pos_table = g.var(&self.pos_emb);
        let positions: Vec<usize> = (0..len).collect();
        let pos = g.embedding_lookup(&pos_table, &positions, &[len])?;
        let h = g.add(&tok, &pos)?;
        self.ln_emb.forward(g, &h)
    }

    /// `ids` is a flattened `[B, L]` block; `mask` marks real positions
    /// with 1.0 and padding with 0.0 and is applied to the keys of every
    /// attention layer.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        ids: &[usize],
        mask: &Tensor,
        batch: usize,
        len: usize,
        rng: &mut RngStream,
        train: bool,
    ) -> Result<TextEncoding> {
        let mut h = self.embed(g, ids, batch, len)?;
        h = g.dropout(&h, self.dropout, rng, train)?;
        for layer in &self.layers {
            h = layer.forward(g, &h, Some(mask), rng, train)?;
        }
        let pooled = g.index_axis(&h, 1, 0)?;
        Ok(TextEncoding { pooled, seq: h })
    }
}

impl VisitParams for TextEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.token_emb"), &mut self.token_emb);
        f(format!("{prefix}.pos_emb"), &mut self.pos_emb);
        self.ln_emb.visit_params(&format!("{prefix}.ln_emb"), f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params(&format!("{prefix}.layer{i}"), f);
        }
    }
}
