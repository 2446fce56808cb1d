//! Modality encoders: a fully-connected encoder for time-invariant
//! features, four interchangeable time-series encoders, and a
//! BERT-architecture text encoder over token ids.
//!
//! Every time-series variant produces both a pooled representation (what
//! the fusion stage consumes) and its per-position sequence states (what
//! cross-attention fusion consumes).

mod cnn;
mod lstm;
mod star;
mod text;
mod transformer;

pub use cnn::CnnEncoder;
pub use lstm::LstmEncoder;
pub use star::StarEncoder;
pub use text::{TextEncoder, TextEncoding};
pub use transformer::TransformerTsEncoder;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Linear, VisitParams};
use crate::rng::RngStream;
use crate::tensor::{Graph, Tensor};

/// Time-invariant encoder: one dense layer with ReLU.
#[derive(Debug, Clone)]
pub struct TiEncoder {
    pub lin: Linear,
}

impl TiEncoder {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        Self {
            lin: Linear::new(in_dim, out_dim, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.lin.out_dim()
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        let h = self.lin.forward(g, x)?;
        g.relu(&h)
    }
}

impl VisitParams for TiEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.lin.visit_params(&format!("{prefix}.lin"), f);
    }
}

/// The four time-series encoder variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsVariant {
    Lstm,
    Cnn,
    StarTransformer,
    TransformerEncoder,
}

impl std::str::FromStr for TsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Self::Lstm),
            "cnn" => Ok(Self::Cnn),
            "star_transformer" => Ok(Self::StarTransformer),
            "transformer_encoder" => Ok(Self::TransformerEncoder),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }
}

/// Output of a time-series encoder.
#[derive(Debug)]
pub struct TsEncoding {
    /// `[B, D2']` representation consumed by fusion and heads.
    pub pooled: Tensor,
    /// `[B, L, hidden]` per-position states for cross-attention fusion.
    pub seq: Tensor,
}

/// A configured time-series encoder.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum TsEncoder {
    Lstm(LstmEncoder),
    Cnn(CnnEncoder),
    Star(StarEncoder),
    Transformer(TransformerTsEncoder),
}

impl TsEncoder {
    pub fn variant(&self) -> TsVariant {
        match self {
            Self::Lstm(_) => TsVariant::Lstm,
            Self::Cnn(_) => TsVariant::Cnn,
            Self::Star(_) => TsVariant::StarTransformer,
            Self::Transformer(_) => TsVariant::TransformerEncoder,
        }
    }

    /// Width of the pooled representation (D2').
    pub fn out_dim(&self) -> usize {
        match self {
            Self::Lstm(e) => e.proj.out_dim(),
            Self::Cnn(e) => e.proj.out_dim(),
            Self::Star(e) => e.proj.out_dim(),
            Self::Transformer(e) => e.width(),
        }
    }

    /// Width of the per-position sequence states.
    pub fn seq_dim(&self) -> usize {
        match self {
            Self::Lstm(e) => e.hidden(),
            Self::Cnn(e) => e.channels(),
            Self::Star(e) => e.width(),
            Self::Transformer(e) => e.width(),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: &Tensor,
        rng: &mut RngStream,
        train: bool,
    ) -> Result<TsEncoding> {
        if x.rank() != 3 {
            return Err(Error::InvalidShape {
                kind: "encode_ts",
                shape: x.shape().to_vec(),
                reason: "expected [batch, time, features]".into(),
            });
        }
        match self {
            Self::Lstm(e) => e.forward(g, x),
            Self::Cnn(e) => e.forward(g, x),
            Self::Star(e) => e.forward(g, x),
            Self::Transformer(e) => e.forward(g, x, rng, train),
        }
    }
}

impl TsEncoder {
    /// Visit only the parameters that shape the per-position sequence
    /// states, skipping the pooled-output projection. Cross-attention
    /// fusion consumes the sequence directly, so the projection is not
    /// part of that model.
    pub fn visit_seq_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            Self::Lstm(e) => {
                f(format!("{prefix}.w_ih"), &mut e.w_ih);
                f(format!("{prefix}.w_hh"), &mut e.w_hh);
                f(format!("{prefix}.bias"), &mut e.bias);
            }
            Self::Cnn(e) => {
                f(format!("{prefix}.kernel1"), &mut e.kernel1);
                f(format!("{prefix}.bias1"), &mut e.bias1);
                f(format!("{prefix}.kernel2"), &mut e.kernel2);
                f(format!("{prefix}.bias2"), &mut e.bias2);
            }
            Self::Star(e) => {
                e.embed.visit_params(&format!("{prefix}.embed"), f);
                e.sat_attn.visit_params(&format!("{prefix}.sat_attn"), f);
                e.relay_attn
                    .visit_params(&format!("{prefix}.relay_attn"), f);
                e.ln_sat.visit_params(&format!("{prefix}.ln_sat"), f);
                e.ln_relay.visit_params(&format!("{prefix}.ln_relay"), f);
            }
            Self::Transformer(e) => e.visit_params(prefix, f),
        }
    }
}

impl VisitParams for TsEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            Self::Lstm(e) => e.visit_params(prefix, f),
            Self::Cnn(e) => e.visit_params(prefix, f),
            Self::Star(e) => e.visit_params(prefix, f),
            Self::Transformer(e) => e.visit_params(prefix, f),
        }
    }
}

#[cfg(test)]
mod tests;
