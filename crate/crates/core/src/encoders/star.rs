//! Star-topology transformer encoder: satellite nodes over the time steps
//! plus one relay hub, updated for a fixed number of cycles.
//!
//! Each cycle first updates every satellite by attending over its ring
//! neighbors, its own token embedding, and the relay; then updates the
//! relay by attending over itself and all satellites. Satellites start as
//! the token embeddings, the relay as their mean. The pooled representation
//! is the relay state after the last cycle, projected.

use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear, MultiHeadAttention, VisitParams};
use crate::rng::RngStream;
use crate::tensor::{Graph, Tensor};

use super::TsEncoding;

#[derive(Debug, Clone)]
pub struct StarEncoder {
    pub embed: Linear,
    pub sat_attn: MultiHeadAttention,
    pub relay_attn: MultiHeadAttention,
    pub ln_sat: LayerNorm,
    pub ln_relay: LayerNorm,
    pub proj: Linear,
    pub cycles: usize,
}

impl StarEncoder {
    pub fn new(
        in_dim: usize,
        width: usize,
        heads: usize,
        cycles: usize,
        out_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Ok(Self {
            embed: Linear::new(in_dim, width, rng),
            sat_attn: MultiHeadAttention::new(width, heads, rng)?,
            relay_attn: MultiHeadAttention::new(width, heads, rng)?,
            ln_sat: LayerNorm::new(width),
            ln_relay: LayerNorm::new(width),
            proj: Linear::new(width, out_dim, rng),
            cycles,
        })
    }

    pub fn width(&self) -> usize {
        self.embed.out_dim()
    }

    /// One satellite-then-relay update cycle. Satellite `i` attends over
    /// `{s[i-1], s[i], s[i+1], e[i], relay}` with cyclic neighbors; the
    /// relay attends over itself and all updated satellites. ReLU then
    /// layer norm follow each update.
    pub fn cycle(
        &self,
        g: &mut Graph,
        satellites: &Tensor,
        relay: &Tensor,
        embeds: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        if satellites.rank() != 3 {
            return Err(Error::InvalidShape {
                kind: "star_cycle",
                shape: satellites.shape().to_vec(),
                reason: "satellites must be [batch, time, width]".into(),
            });
        }
        let (batch, len, width) = (
            satellites.shape()[0],
            satellites.shape()[1],
            satellites.shape()[2],
        );
        let mut updated = Vec::with_capacity(len);
        for i in 0..len {
            let prev = g.index_axis(satellites, 1, (i + len - 1) % len)?;
            let cur = g.index_axis(satellites, 1, i)?;
            let next = g.index_axis(satellites, 1, (i + 1) % len)?;
            let emb = g.index_axis(embeds, 1, i)?;
            let ctx_flat = g.concat_last(&[&prev, &cur, &next, &emb, relay])?;
            let ctx = g.reshape(&ctx_flat, vec![batch, 5, width])?;
            let q = g.reshape(&cur, vec![batch, 1, width])?;
            let att = self.sat_attn.forward(g, &q, &ctx, None)?;
            let att = g.reshape(&att, vec![batch, width])?;
            let act = g.relu(&att)?;
            updated.push(self.ln_sat.forward(g, &act)?);
        }
        let sat_refs: Vec<&Tensor> = updated.iter().collect();
        let stacked = g.concat_last(&sat_refs)?;
        let new_sats = g.reshape(&stacked, vec![batch, len, width])?;

        let mut relay_ctx_parts: Vec<&Tensor> = Vec::with_capacity(len + 1);
        relay_ctx_parts.push(relay);
        relay_ctx_parts.extend(updated.iter());
        let relay_ctx_flat = g.concat_last(&relay_ctx_parts)?;
        let relay_ctx = g.reshape(&relay_ctx_flat, vec![batch, len + 1, width])?;
        let q = g.reshape(relay, vec![batch, 1, width])?;
        let att = self.relay_attn.forward(g, &q, &relay_ctx, None)?;
        let att = g.reshape(&att, vec![batch, width])?;
        let act = g.relu(&att)?;
        let new_relay = self.ln_relay.forward(g, &act)?;
        Ok((new_sats, new_relay))
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<TsEncoding> {
        let embeds = self.embed.forward(g, x)?;
        let mut satellites = embeds.clone();
        let mut relay = g.mean_axis(&embeds, 1)?;
        for _ in 0..self.cycles {
            let (s, r) = self.cycle(g, &satellites, &relay, &embeds)?;
            satellites = s;
            relay = r;
        }
        let proj = self.proj.forward(g, &relay)?;
        let pooled = g.relu(&proj)?;
        Ok(TsEncoding {
            pooled,
            seq: satellites,
        })
    }
}

impl VisitParams for StarEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.embed.visit_params(&format!("{prefix}.embed"), f);
        self.sat_attn.visit_params(&format!("{prefix}.sat_attn"), f);
        self.relay_attn
            .visit_params(&format!("{prefix}.relay_attn"), f);
        self.ln_sat.visit_params(&format!("{prefix}.ln_sat"), f);
        self.ln_relay.visit_params(&format!("{prefix}.ln_relay"), f);
        self.proj.visit_params(&format!("{prefix}.proj"), f);
    }
}
